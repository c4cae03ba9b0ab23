fn main() {
    std::process::exit(cbma::cli::run());
}
