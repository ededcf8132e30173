fn main() {
    std::process::exit(perelman_lab::cli::run_cli());
}
