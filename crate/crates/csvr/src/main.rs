fn main() {
    std::process::exit(csvr::cli::run_from_env());
}
