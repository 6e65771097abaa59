fn main() {
    std::process::exit(randcon::cli::run());
}
