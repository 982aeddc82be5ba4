fn main() {
    let code = tomo::cli::run(std::env::args_os());
    std::process::exit(code);
}
