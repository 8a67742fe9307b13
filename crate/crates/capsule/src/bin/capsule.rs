fn main() {
    std::process::exit(capsule::cli::run());
}
