fn main() {
    std::process::exit(hollownerf::cli::run_from(std::env::args_os()));
}
