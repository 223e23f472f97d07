use std::fs;
use std::process::Command;

fn wishart(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wishart")).args(args).output().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = wishart(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("identity-check"));
}

#[test]
fn unknown_flag_exits_two() {
    let out = wishart(&["density", "--a", "1", "--b", "1", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("draws.csv");
    let out = wishart(&[
        "sample", "--a", "1,2,4", "--b", "0.5,1.5", "--seed", "3", "--count", "500", "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(&path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("lambda_1,lambda_2"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().all(|r| r[0] <= r[1] && r[0] > 0.0));
    let summary = fs::read_to_string(dir.path().join("draws.csv.summary")).unwrap();
    assert!(summary.contains("seed = 3"));
    assert!(summary.contains("count = 500"));
}

#[test]
fn grid_file_matches_inline_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.txt");
    fs::write(&grid, "0.5\n1.0\n2.0\n").unwrap();
    let spec = ["--a", "1,2", "--b", "1,3"];
    let from_file = wishart(&[&["cdf"][..], &spec, &["--grid-file", grid.to_str().unwrap()]].concat());
    let mut inline_args = vec!["cdf"];
    inline_args.extend(spec);
    inline_args.extend(["--grid", "0.5:2:4"]);
    let inline = wishart(&inline_args);
    assert_eq!(from_file.status.code(), Some(0));
    let f = String::from_utf8(from_file.stdout).unwrap();
    let i = String::from_utf8(inline.stdout).unwrap();
    assert_eq!(f.lines().nth(1), i.lines().nth(1));
    assert_eq!(f.lines().nth(2), i.lines().nth(2));
    assert_eq!(f.lines().nth(3), i.lines().nth(4));
}
