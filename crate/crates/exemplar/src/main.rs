fn main() {
    exemplar::cli::run();
}
