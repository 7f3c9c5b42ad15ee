fn main() {
    std::process::exit(damex::cli::main());
}
