fn main() {
    std::process::exit(admgs::run(std::env::args()));
}
