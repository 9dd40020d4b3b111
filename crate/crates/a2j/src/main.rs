fn main() {
    std::process::exit(a2j::run());
}
