#include "creditrbm/manifest.hpp"

#include "creditrbm/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace creditrbm {

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CRBM_REQUIRE(in.good(), "file_hash: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

void RunManifest::add_input(const std::string& name, const std::string& path) {
    inputs[name] = ArtifactRecord{name, path, file_hash(path)};
}

void RunManifest::add_artifact(const std::string& name, const std::string& path) {
    artifacts.push_back(ArtifactRecord{name, path, file_hash(path)});
}

void RunManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["command"] = command;
    j["argv"] = argv;
    j["wall_seconds"] = wall_seconds;
    j["inputs"] = nlohmann::json::object();
    for (const auto& [name, rec] : inputs) {
        j["inputs"][name] = {{"path", rec.path}, {"hash", rec.hash}};
    }
    j["artifacts"] = nlohmann::json::array();
    for (const auto& rec : artifacts) {
        j["artifacts"].push_back({{"name", rec.name}, {"path", rec.path}, {"hash", rec.hash}});
    }
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "RunManifest: cannot open " + path);
    out << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "RunManifest: cannot open " + path);
    try {
        nlohmann::json j;
        in >> j;
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.wall_seconds = j.value("wall_seconds", 0.0);
        for (const auto& [name, rec] : j.at("inputs").items()) {
            m.inputs[name] = ArtifactRecord{name, rec.at("path").get<std::string>(),
                                            rec.at("hash").get<std::string>()};
        }
        for (const auto& rec : j.at("artifacts")) {
            m.artifacts.push_back(ArtifactRecord{rec.at("name").get<std::string>(),
                                                 rec.at("path").get<std::string>(),
                                                 rec.at("hash").get<std::string>()});
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("RunManifest: malformed " + path + ": " + e.what());
    }
}

} // namespace creditrbm
