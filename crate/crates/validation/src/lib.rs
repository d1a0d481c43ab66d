//! Holds the `acceptance` test target, which runs the end-to-end criteria
//! against `hrmsbo-core`. The library itself is empty.
