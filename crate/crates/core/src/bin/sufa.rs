fn main() {
    std::process::exit(sufa::cli::main_exit());
}
