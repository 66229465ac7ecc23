//! Holds the `acceptance` test target, which checks the library and the
//! inference service together. Run it with `cargo test -p layerfork-gate`.
