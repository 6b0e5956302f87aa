fn main() {
    let code = ppod_core::cli::run_command(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
