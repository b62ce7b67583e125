fn main() {
    std::process::exit(icl_guard::cli::run_cli(std::env::args_os()));
}
