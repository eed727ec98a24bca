fn main() {
    // CLI wiring lands with the experiments module.
}
