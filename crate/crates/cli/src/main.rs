fn main() {
    std::process::exit(bvfield_cli::main_with(std::env::args().collect()));
}
