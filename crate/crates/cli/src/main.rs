fn main() {
    // CLI lands after the library.
}
