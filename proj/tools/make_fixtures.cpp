// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

// Regenerates the scene fixtures under tests/data.
//
//   make_fixtures <output-dir>

#include "evgs/io.hpp"
#include "evgs/scene.hpp"

#include <filesystem>
#include <iostream>

int main(int argc, char **argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixtures <output-dir>\n";
        return 1;
    }
    namespace fs = std::filesystem;
    const fs::path root(argv[1]);
    try {
        for (int variant = 0; variant < evgs::kSyntheticSceneCount; ++variant) {
            evgs::SyntheticBundleConfig cfg;
            cfg.variant = variant;
            cfg.width = 64;
            cfg.height = 64;
            cfg.nViews = 4;
            const fs::path dir = root / ("scene_" + std::to_string(variant));
            evgs::saveScene(evgs::makeSyntheticBundle(cfg), dir.string());
            std::cout << "wrote " << dir.string() << "\n";
        }

        evgs::SyntheticBundleConfig minimal;
        minimal.width = 32;
        minimal.height = 32;
        minimal.nViews = 2;
        evgs::saveScene(evgs::makeSyntheticBundle(minimal), (root / "minimal").string());
        evgs::saveCloudPly({}, (root / "empty_cloud.ply").string());
        std::cout << "wrote " << (root / "minimal").string() << " and empty_cloud.ply\n";
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
