fn main() {
    std::process::exit(macdmp::cli::run_from_args(std::env::args_os()));
}
