"""Graph and linear-algebra algorithms on implicit kernel graphs via KDE queries."""
