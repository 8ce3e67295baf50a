#ifndef CREDITRBM_MANIFEST_HPP
#define CREDITRBM_MANIFEST_HPP

#include <map>
#include <string>
#include <vector>

namespace creditrbm {

// FNV-1a 64-bit digest of a file's bytes, as a hex string. Cheap and stable;
// used to certify that replayed pipelines reproduce their artifacts.
std::string file_hash(const std::string& path);

struct ArtifactRecord {
    std::string name;
    std::string path;
    std::string hash;
};

// One manifest per CLI invocation, written alongside the outputs.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv; // full argument list, excluding the binary
    std::map<std::string, ArtifactRecord> inputs;
    std::vector<ArtifactRecord> artifacts;
    double wall_seconds = 0.0;

    void add_input(const std::string& name, const std::string& path);
    void add_artifact(const std::string& name, const std::string& path);

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

} // namespace creditrbm

#endif
