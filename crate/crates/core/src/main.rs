fn main() {
    std::process::exit(bnpmmd::cli::dispatch(std::env::args_os()));
}
