#include "dim/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace dim {

void DatasetSpec::validate() const {
    if (num_identities < 2) {
        throw ConfigError("dataset: num_identities must be >= 2, got " +
                          std::to_string(num_identities));
    }
    if (samples_per_identity < 2) {
        throw ConfigError("dataset: samples_per_identity must be >= 2, got " +
                          std::to_string(samples_per_identity));
    }
    if (num_cameras < 2) {
        throw ConfigError("dataset: num_cameras must be >= 2, got " +
                          std::to_string(num_cameras));
    }
    if (input_dim == 0) throw ConfigError("dataset: input_dim must be positive");
    if (cluster_spread < 0.0) throw ConfigError("dataset: cluster_spread must be >= 0");
    if (camera_offset_scale < 0.0) {
        throw ConfigError("dataset: camera_offset_scale must be >= 0");
    }
}

UnlabeledSet UnlabeledSet::from(const std::vector<Sample>& samples) {
    UnlabeledSet u;
    u.features.reserve(samples.size());
    for (const auto& s : samples) u.features.push_back(s.features);
    return u;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fmt_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round trip
    return {buf, p};
}

namespace {

void apply_shift(std::vector<double>& x, const DomainShift& shift) {
    const double theta = shift.rotation_angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t i = 0; i + 1 < x.size(); i += 2) {
        const double a = x[i], b = x[i + 1];
        x[i] = c * a - s * b;
        x[i + 1] = s * a + c * b;
    }
    const double t = shift.mean_shift / std::sqrt(static_cast<double>(x.size()));
    for (auto& v : x) v += t;
}

double nearest_centroid_accuracy(const std::vector<Sample>& train,
                                 std::size_t num_identities, std::size_t dim) {
    if (train.empty()) return 0.0;
    std::vector<std::vector<double>> centroid(num_identities, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(num_identities, 0);
    for (const auto& s : train) {
        for (std::size_t j = 0; j < dim; ++j) centroid[s.identity][j] += s.features[j];
        ++count[s.identity];
    }
    for (std::size_t i = 0; i < num_identities; ++i) {
        if (count[i] == 0) continue;
        for (auto& v : centroid[i]) v /= static_cast<double>(count[i]);
    }
    std::size_t hits = 0;
    for (const auto& s : train) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_id = 0;
        for (std::size_t i = 0; i < num_identities; ++i) {
            if (count[i] == 0) continue;
            double d2 = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double c = s.features[j] - centroid[i][j];
                d2 += c * c;
            }
            if (d2 < best) {
                best = d2;
                best_id = i;
            }
        }
        if (best_id == static_cast<std::size_t>(s.identity)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(train.size());
}

std::string sample_row(const Sample& s, const char* split) {
    std::ostringstream os;
    os << s.identity << ',' << s.camera << ',' << split;
    for (double v : s.features) os << ',' << fmt_double(v);
    os << '\n';
    return os.str();
}

std::string body_text(const Dataset& ds) {
    std::string body;
    for (const auto& s : ds.train) body += sample_row(s, "train");
    for (const auto& s : ds.query) body += sample_row(s, "query");
    for (const auto& s : ds.gallery) body += sample_row(s, "gallery");
    return body;
}

}  // namespace

Dataset synth_dataset(const DatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    const std::size_t d = spec.input_dim;
    const double spread =
        spec.cluster_spread * (spec.domain_shift ? spec.domain_shift->spread_scale : 1.0);

    std::vector<std::vector<double>> centroids(spec.num_identities);
    for (auto& c : centroids) {
        c.resize(d);
        for (auto& v : c) v = rng.normal();
    }
    std::vector<std::vector<double>> cam_offsets(spec.num_cameras);
    for (auto& o : cam_offsets) {
        o.resize(d);
        for (auto& v : o) v = rng.normal() * spec.camera_offset_scale;
    }

    Dataset ds;
    ds.spec = spec;
    const std::size_t per_id = spec.samples_per_identity;
    const std::size_t n_train = per_id / 2;
    for (std::size_t id = 0; id < spec.num_identities; ++id) {
        std::vector<Sample> rest;
        for (std::size_t j = 0; j < per_id; ++j) {
            Sample s;
            s.identity = static_cast<int>(id);
            s.camera = static_cast<int>(j % spec.num_cameras);
            s.features.resize(d);
            for (std::size_t k = 0; k < d; ++k) {
                s.features[k] =
                    centroids[id][k] + spread * rng.normal() + cam_offsets[s.camera][k];
            }
            if (spec.domain_shift) apply_shift(s.features, *spec.domain_shift);
            if (j < n_train) {
                ds.train.push_back(std::move(s));
            } else {
                rest.push_back(std::move(s));
            }
        }
        // first sample under each camera becomes a query, remainder gallery
        std::vector<bool> cam_used(spec.num_cameras, false);
        for (auto& s : rest) {
            if (!cam_used[s.camera]) {
                cam_used[s.camera] = true;
                ds.query.push_back(std::move(s));
            } else {
                ds.gallery.push_back(std::move(s));
            }
        }
    }
    ds.difficulty = nearest_centroid_accuracy(ds.train, spec.num_identities, d);
    ds.hash = fnv1a_hex(body_text(ds));
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write dataset file " + path);
    const auto& sp = ds.spec;
    f << "# dim-dataset v1\n";
    f << "# num_identities = " << sp.num_identities << '\n';
    f << "# samples_per_identity = " << sp.samples_per_identity << '\n';
    f << "# num_cameras = " << sp.num_cameras << '\n';
    f << "# input_dim = " << sp.input_dim << '\n';
    f << "# cluster_spread = " << fmt_double(sp.cluster_spread) << '\n';
    f << "# camera_offset_scale = " << fmt_double(sp.camera_offset_scale) << '\n';
    if (sp.domain_shift) {
        f << "# shift.rotation_angle = " << fmt_double(sp.domain_shift->rotation_angle_deg)
          << '\n';
        f << "# shift.mean_shift = " << fmt_double(sp.domain_shift->mean_shift) << '\n';
        f << "# shift.spread_scale = " << fmt_double(sp.domain_shift->spread_scale) << '\n';
    }
    f << "# seed = " << sp.seed << '\n';
    f << "# difficulty = " << fmt_double(ds.difficulty) << '\n';
    f << "# hash = " << ds.hash << '\n';
    f << "identity,camera,split,features...\n";
    f << body_text(ds);
    if (!f) throw IoError("failed writing dataset file " + path);
}

namespace {

double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
    double v = 0.0;
    const auto* b = s.data();
    const auto* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e) {
        throw IoError(path + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
    }
    return v;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read dataset file " + path);
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::string expected_hash;
    bool saw_magic = false;

    auto header_value = [&](const std::string& l) {
        const auto eq = l.find('=');
        if (eq == std::string::npos) {
            throw IoError(path + ":" + std::to_string(line_no) + ": malformed header");
        }
        auto v = l.substr(eq + 1);
        const auto b = v.find_first_not_of(' ');
        return b == std::string::npos ? std::string() : v.substr(b);
    };

    while (std::getline(f, line)) {
        ++line_no;
        if (line.rfind("# dim-dataset", 0) == 0) {
            if (line != "# dim-dataset v1") {
                throw IoError(path + ": unsupported dataset format version: " + line);
            }
            saw_magic = true;
            continue;
        }
        if (line.rfind("#", 0) == 0) {
            if (line.find("num_identities") != std::string::npos)
                ds.spec.num_identities = std::stoull(header_value(line));
            else if (line.find("samples_per_identity") != std::string::npos)
                ds.spec.samples_per_identity = std::stoull(header_value(line));
            else if (line.find("num_cameras") != std::string::npos)
                ds.spec.num_cameras = std::stoull(header_value(line));
            else if (line.find("input_dim") != std::string::npos)
                ds.spec.input_dim = std::stoull(header_value(line));
            else if (line.find("cluster_spread") != std::string::npos)
                ds.spec.cluster_spread = parse_double(header_value(line), path, line_no);
            else if (line.find("camera_offset_scale") != std::string::npos)
                ds.spec.camera_offset_scale =
                    parse_double(header_value(line), path, line_no);
            else if (line.find("shift.rotation_angle") != std::string::npos) {
                if (!ds.spec.domain_shift) ds.spec.domain_shift.emplace();
                ds.spec.domain_shift->rotation_angle_deg =
                    parse_double(header_value(line), path, line_no);
            } else if (line.find("shift.mean_shift") != std::string::npos) {
                if (!ds.spec.domain_shift) ds.spec.domain_shift.emplace();
                ds.spec.domain_shift->mean_shift =
                    parse_double(header_value(line), path, line_no);
            } else if (line.find("shift.spread_scale") != std::string::npos) {
                if (!ds.spec.domain_shift) ds.spec.domain_shift.emplace();
                ds.spec.domain_shift->spread_scale =
                    parse_double(header_value(line), path, line_no);
            } else if (line.find("seed") != std::string::npos)
                ds.spec.seed = std::stoull(header_value(line));
            else if (line.find("difficulty") != std::string::npos)
                ds.difficulty = parse_double(header_value(line), path, line_no);
            else if (line.find("hash") != std::string::npos)
                expected_hash = header_value(line);
            continue;
        }
        if (line.rfind("identity,", 0) == 0) continue;  // column header
        if (line.empty()) continue;
        if (!saw_magic) throw IoError(path + ": not a dim-dataset file");

        Sample s;
        std::string cell;
        std::istringstream row(line);
        std::getline(row, cell, ',');
        s.identity = static_cast<int>(parse_double(cell, path, line_no));
        std::getline(row, cell, ',');
        s.camera = static_cast<int>(parse_double(cell, path, line_no));
        std::string split;
        std::getline(row, split, ',');
        while (std::getline(row, cell, ',')) {
            s.features.push_back(parse_double(cell, path, line_no));
        }
        if (s.features.size() != ds.spec.input_dim) {
            throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(ds.spec.input_dim) + " features, got " +
                          std::to_string(s.features.size()));
        }
        if (split == "train") ds.train.push_back(std::move(s));
        else if (split == "query") ds.query.push_back(std::move(s));
        else if (split == "gallery") ds.gallery.push_back(std::move(s));
        else {
            throw IoError(path + ":" + std::to_string(line_no) + ": unknown split '" +
                          split + "'");
        }
    }
    if (!saw_magic) throw IoError(path + ": not a dim-dataset file");

    ds.hash = fnv1a_hex(body_text(ds));
    if (!expected_hash.empty() && ds.hash != expected_hash) {
        throw IoError(path + ": content hash mismatch (file corrupt or edited): header " +
                      expected_hash + ", computed " + ds.hash);
    }
    return ds;
}

}  // namespace dim
