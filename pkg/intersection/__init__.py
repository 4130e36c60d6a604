# Intersection simulator package
