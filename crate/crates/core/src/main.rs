fn main() {
    std::process::exit(lrkbest::sim::cli_main(std::env::args().skip(1).collect()));
}
