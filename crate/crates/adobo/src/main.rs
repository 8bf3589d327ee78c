fn main() {
    std::process::exit(adobo::cli::run_main());
}
