fn main() {
    std::process::exit(flashtok::cli::run_main());
}
