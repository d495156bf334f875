fn main() {
    std::process::exit(fpmc::cli::main_from_env());
}
