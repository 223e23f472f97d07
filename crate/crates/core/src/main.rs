use std::io;

fn main() {
    let args = std::env::args().collect();
    let code = wishart_core::cli::main_with_args(args, &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
