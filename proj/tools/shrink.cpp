// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#include "shrink/cli.hpp"

int main(int argc, char **argv) { return shrink::run_cli(argc, argv); }
