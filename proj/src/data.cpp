// SPDX-License-Identifier: Apache-2.0
#include "treesr/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "treesr/error.hpp"

namespace fs = std::filesystem;

namespace treesr {

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, '\t')) out.push_back(field);
    return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string() + ": cannot open manifest");
    DatasetManifest m;
    m.root = path.parent_path();
    std::string line;
    bool header = false;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto start = line.find_first_not_of("# ");
            m.warnings.push_back(start == std::string::npos ? std::string() : line.substr(start));
            continue;
        }
        const auto fields = split_tabs(line);
        if (!header) {
            if (fields.size() != 2 || !fields[0].starts_with("scale=") || !fields[1].starts_with("split=")) {
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected header 'scale=<int>\\tsplit=<train|test>'");
            }
            try {
                m.scale = std::stoi(fields[0].substr(6));
            } catch (const std::exception&) {
                throw IoError(path.string() + ": invalid scale in header");
            }
            m.split = parse_split(fields[1].substr(6));
            header = true;
            continue;
        }
        if (fields.size() != 3) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
        }
        m.entries.push_back({fields[0], fields[1], fields[2]});
    }
    if (!header) throw IoError(path.string() + ": missing header");
    return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot write manifest");
    out << "scale=" << m.scale << "\tsplit=" << to_string(m.split) << "\n";
    for (const std::string& w : m.warnings) out << "# " << w << "\n";
    for (const ManifestEntry& e : m.entries) {
        out << e.identifier << "\t" << e.lr.generic_string() << "\t" << e.hr.generic_string() << "\n";
    }
    if (!out) throw IoError(path.string() + ": write failed");
}

std::vector<PairRejection> iterate_pairs(const DatasetManifest& m, const std::function<void(ImagePair&&)>& visit) {
    std::vector<PairRejection> rejected;
    for (const ManifestEntry& e : m.entries) {
        ImagePair pair;
        pair.identifier = e.identifier;
        pair.scale = m.scale;
        try {
            pair.lr = load_png(m.lr_path(e));
            pair.hr = load_png(m.hr_path(e));
        } catch (const Error& err) {
            rejected.push_back({e.identifier, err.what()});
            continue;
        }
        if (pair.hr.height() != m.scale * pair.lr.height() || pair.hr.width() != m.scale * pair.lr.width()) {
            std::ostringstream os;
            os << "dimension mismatch: hr " << pair.hr.height() << "x" << pair.hr.width() << " is not " << m.scale
               << " x lr " << pair.lr.height() << "x" << pair.lr.width();
            rejected.push_back({e.identifier, os.str()});
            continue;
        }
        visit(std::move(pair));
    }
    return rejected;
}

LoadedPairs load_pairs(const DatasetManifest& m) {
    LoadedPairs out;
    out.rejected = iterate_pairs(m, [&](ImagePair&& p) { out.pairs.push_back(std::move(p)); });
    return out;
}

void check_disjoint(const DatasetManifest& train, const DatasetManifest& test) {
    std::set<std::string> ids;
    for (const auto& e : train.entries) ids.insert(e.identifier);
    for (const auto& e : test.entries) {
        if (ids.count(e.identifier)) throw ConfigError("identifier '" + e.identifier + "' appears in both splits");
    }
}

GeneratedDataset generate_bicubic_pairs(const fs::path& hr_dir, int scale, const fs::path& out_dir, int test_every) {
    if (scale != 2 && scale != 3 && scale != 4 && scale != 8) {
        throw ConfigError("scale must be one of 2, 3, 4, 8, got " + std::to_string(scale));
    }
    if (!fs::is_directory(hr_dir)) throw IoError(hr_dir.string() + ": not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(hr_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    if (files.empty()) throw IoError(hr_dir.string() + ": no HR images found");
    std::sort(files.begin(), files.end());

    fs::create_directories(out_dir / "hr");
    fs::create_directories(out_dir / "lr");
    GeneratedDataset out;
    out.train.root = out_dir;
    out.train.scale = scale;
    out.train.split = Split::Train;
    DatasetManifest test = out.train;
    test.split = Split::Test;

    const int min_side = scale * 8;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const fs::path& file = files[i];
        DatasetManifest& target = (test_every > 0 && (i + 1) % test_every == 0) ? test : out.train;
        const std::string id = file.stem().string();
        Image hr;
        int depth = 8;
        try {
            hr = load_png(file);
            depth = png_bit_depth(file);
        } catch (const IoError& e) {
            target.warnings.push_back("skipped " + file.filename().string() + ": " + e.what());
            continue;
        }
        const int h = hr.height() - hr.height() % scale;
        const int w = hr.width() - hr.width() % scale;
        if (h < min_side || w < min_side) {
            target.warnings.push_back("skipped " + file.filename().string() + ": " + std::to_string(hr.height()) + "x" +
                                      std::to_string(hr.width()) + " is smaller than " + std::to_string(min_side) +
                                      " per side");
            continue;
        }
        hr = hr.crop((hr.height() % scale) / 2, (hr.width() % scale) / 2, h, w);
        const Image lr = bicubic_resize(hr, h / scale, w / scale);
        const fs::path hr_rel = fs::path("hr") / (id + ".png");
        const fs::path lr_rel = fs::path("lr") / (id + ".png");
        save_png(hr, out_dir / hr_rel, depth);
        save_png(lr, out_dir / lr_rel, depth);
        target.entries.push_back({id, lr_rel, hr_rel});
    }
    save_manifest(out.train, out_dir / "train.manifest");
    if (test_every > 0) {
        save_manifest(test, out_dir / "test.manifest");
        out.test = std::move(test);
    }
    return out;
}

std::pair<Image, Image> sample_patch_pair(const ImagePair& pair, int lr_patch, Rng& rng) {
    if (lr_patch < 1 || lr_patch > pair.lr.height() || lr_patch > pair.lr.width()) {
        throw ShapeError("patch " + std::to_string(lr_patch) + " larger than LR image " +
                         std::to_string(pair.lr.height()) + "x" + std::to_string(pair.lr.width()));
    }
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(pair.lr.height() - lr_patch + 1)));
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(pair.lr.width() - lr_patch + 1)));
    const int s = pair.scale;
    return {pair.lr.crop(y, x, lr_patch, lr_patch), pair.hr.crop(y * s, x * s, lr_patch * s, lr_patch * s)};
}

}  // namespace treesr
