fn main() {
    let code = kgc_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
