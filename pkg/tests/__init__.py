# Tests package for the consensual aggregation toolkit
