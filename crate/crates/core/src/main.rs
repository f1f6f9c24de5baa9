fn main() {
    std::process::exit(stickertag::cli::main());
}
