fn main() {
    std::process::exit(claws::cli::main());
}
