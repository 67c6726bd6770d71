#include <cstdio>
#include <cstdlib>
#include <string>

#include "objproc/runtime.hpp"

// Worker executable: joins a socket cluster and serves the registered classes
// until terminated.

int main(int argc, char** argv) {
    std::uint32_t machine_id = 0;
    std::string topology;
    bool have_id = false;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--machine-id" && i + 1 < argc) {
            machine_id = static_cast<std::uint32_t>(std::strtoul(argv[++i], nullptr, 10));
            have_id = true;
        } else if (arg == "--topology" && i + 1 < argc) {
            topology = argv[++i];
        } else {
            std::fprintf(stderr, "usage: objproc-worker --machine-id K --topology FILE\n");
            return 2;
        }
    }
    if (!have_id || topology.empty()) {
        std::fprintf(stderr, "usage: objproc-worker --machine-id K --topology FILE\n");
        return 2;
    }
    try {
        objproc::runtime::run_worker(machine_id, topology, objproc::runtime::standard_classes());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "objproc-worker: %s\n", e.what());
        return 1;
    }
}
