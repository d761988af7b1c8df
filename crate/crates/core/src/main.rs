fn main() {
    std::process::exit(hazard_core::cli::run());
}
