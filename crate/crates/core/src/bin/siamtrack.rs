fn main() {
    let code = siamtrack::harness::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
