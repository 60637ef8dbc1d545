//! Holds the `acceptance` test target, kept in its own package so the long
//! desk-scale training runs after every other suite in the workspace.
