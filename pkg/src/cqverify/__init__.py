"""cqverify: semantics, weakest preconditions, coupling optimization and relational
proof checking for classical-quantum while programs."""

__version__ = "0.1.0"
