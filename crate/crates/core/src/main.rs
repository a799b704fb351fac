fn main() { std::process::exit(mognmf::cli::main()); }
