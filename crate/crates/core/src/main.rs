fn main() {
    std::process::exit(ksubset::cli::main());
}
