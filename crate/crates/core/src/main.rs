fn main() {
    std::process::exit(collab_bandit::cli::main());
}
