fn main() {
    std::process::exit(qxqnet::cli::main());
}
