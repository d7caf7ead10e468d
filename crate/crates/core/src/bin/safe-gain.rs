fn main() {
    std::process::exit(safe_gain::harness::cli::cli_main(std::env::args_os()));
}
