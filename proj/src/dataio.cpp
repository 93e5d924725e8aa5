#include "fvg/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fvg/errors.hpp"
#include "fvg/indicators.hpp"

namespace fvg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'F', 'V', 'G', 'E'};
constexpr double kUnitKeepTol = 1e-4;
constexpr double kUnitFixTol = 1e-3;

// Generator constants (see synth_generate).
constexpr double kBackgroundStrength = 3.0;
constexpr double kPriorBackgroundShare = 0.5;
constexpr double kMaskErrorStrength = 2.0;
constexpr double kBankNoiseBase = 0.3;
constexpr double kBankNoiseNew = 1.6;
constexpr double kBankNoisePrior = 0.6;

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xFFu), static_cast<char>((v >> 8) & 0xFFu),
                           static_cast<char>((v >> 16) & 0xFFu), static_cast<char>((v >> 24) & 0xFFu)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string record_context(const SampleRecord& r) { return "record '" + r.id + "'"; }

void check_unit(ConstSpan v, const std::string& what) {
    const double n = norm(v);
    if (std::abs(n - 1.0) > kUnitKeepTol) {
        std::ostringstream msg;
        msg << what << " is not unit-norm (norm " << n << ")";
        throw ValidationError(msg.str());
    }
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Vec rounded(Vec v) {
    round_to_float(v);
    return v;
}

}  // namespace

bool Dataset::has_prior_logits() const {
    return !records.empty() && std::all_of(records.begin(), records.end(), [](const SampleRecord& r) {
        return r.z_clip.has_value();
    });
}

Block Block::from_floats(std::size_t rows, std::size_t cols, std::span<const double> values) {
    if (values.size() != rows * cols) throw ShapeError("Block::from_floats: size mismatch");
    Block b;
    b.rows = static_cast<std::uint32_t>(rows);
    b.cols = static_cast<std::uint32_t>(cols);
    b.words.reserve(values.size());
    for (double v : values) b.words.push_back(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return b;
}

Block Block::from_mat(const Mat& m) { return from_floats(m.rows(), m.cols(), m.data()); }

float Block::float_at(std::size_t i) const { return std::bit_cast<float>(words.at(i)); }

Mat Block::to_mat() const {
    Mat m(rows, cols);
    for (std::size_t i = 0; i < words.size(); ++i) m.data()[i] = static_cast<double>(float_at(i));
    return m;
}

void write_block(const fs::path& path, const Block& block) {
    if (block.words.size() != static_cast<std::size_t>(block.rows) * block.cols) {
        throw ShapeError("write_block: payload does not match rows x cols");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kFvgeVersion);
    put_u32(out, block.rows);
    put_u32(out, block.cols);
    for (std::uint32_t w : block.words) put_u32(out, w);
    if (!out) throw Error("write failed: " + path.string());
}

Block read_block(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open block file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kFvgeHeaderBytes) throw FormatError(path.string() + ": truncated header");
    if (!std::equal(kMagic, kMagic + 4, bytes.begin(), [](char a, unsigned char b) {
            return static_cast<unsigned char>(a) == b;
        })) {
        throw FormatError(path.string() + ": bad magic");
    }
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kFvgeVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    Block b;
    b.rows = get_u32(bytes.data() + 8);
    b.cols = get_u32(bytes.data() + 12);
    const std::size_t count = static_cast<std::size_t>(b.rows) * b.cols;
    if (bytes.size() != kFvgeHeaderBytes + 4 * count) {
        throw FormatError(path.string() + ": payload size does not match header");
    }
    b.words.resize(count);
    for (std::size_t i = 0; i < count; ++i) b.words[i] = get_u32(bytes.data() + kFvgeHeaderBytes + 4 * i);
    return b;
}

void validate_dataset(const Dataset& data) {
    const ClassBank& banks = data.banks;
    const std::size_t classes = banks.class_count();
    const std::size_t dim = banks.dim();
    if (classes == 0 || dim == 0) throw ValidationError("class banks are empty");
    if (banks.feats_prior.rows() != classes || banks.feats_prior.cols() != dim) {
        throw ValidationError("backbone and prior banks disagree in shape");
    }
    if (banks.names.size() != classes) throw ValidationError("class name count differs from bank rows");
    for (std::size_t c = 0; c < classes; ++c) {
        check_unit(banks.feats_backbone.row(c), "backbone bank row " + std::to_string(c));
        check_unit(banks.feats_prior.row(c), "prior bank row " + std::to_string(c));
    }

    std::set<std::size_t> base(data.split.base_classes.begin(), data.split.base_classes.end());
    for (std::size_t c : data.split.base_classes) {
        if (c >= classes) throw ValidationError("base class index out of range");
    }
    for (std::size_t c : data.split.new_classes) {
        if (c >= classes) throw ValidationError("new class index out of range");
        if (base.count(c) != 0) throw ValidationError("class " + std::to_string(c) + " is both base and new");
    }
    if (data.train_count > data.records.size()) throw ValidationError("train_count exceeds record count");

    const bool with_prior = !data.records.empty() && data.records.front().z_clip.has_value();
    std::set<std::string> ids;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const SampleRecord& r = data.records[i];
        if (!ids.insert(r.id).second) throw ValidationError("duplicate " + record_context(r));
        if (r.label >= classes) throw ValidationError(record_context(r) + ": label out of range");
        if (i < data.train_count && base.count(r.label) == 0) {
            throw ValidationError(record_context(r) + ": training record with a non-base label");
        }
        if (r.feat_full.size() != dim || r.feat_fg.size() != dim) {
            throw ValidationError(record_context(r) + ": feature dimension mismatch");
        }
        check_unit(r.feat_full, record_context(r) + " feat_full");
        check_unit(r.feat_fg, record_context(r) + " feat_fg");
        if (!(r.area_ratio >= 0.0 && r.area_ratio <= 1.0)) {
            throw ValidationError(record_context(r) + ": area ratio outside [0,1]");
        }
        if (r.z_clip.has_value() != with_prior) {
            throw ValidationError(record_context(r) + ": prior logits must be present on all records or none");
        }
        if (r.z_clip && r.z_clip->size() != classes) {
            throw ValidationError(record_context(r) + ": prior logit length differs from class count");
        }
    }
}

void write_dataset(const Dataset& data, const fs::path& dir) {
    validate_dataset(data);
    fs::create_directories(dir);
    const std::size_t n = data.records.size();
    const std::size_t dim = data.dim();
    const std::size_t classes = data.banks.class_count();
    const bool with_prior = data.has_prior_logits();

    json manifest;
    manifest["format"] = "FVGE";
    manifest["version"] = kFvgeVersion;
    manifest["dim"] = dim;
    manifest["class_count"] = classes;
    manifest["record_count"] = n;
    manifest["train_count"] = data.train_count;
    manifest["shots"] = data.split.shots;
    manifest["has_z_clip"] = with_prior;
    manifest["base_classes"] = data.split.base_classes;
    manifest["new_classes"] = data.split.new_classes;
    manifest["class_names"] = data.banks.names;
    std::vector<std::string> ids;
    ids.reserve(n);
    for (const auto& r : data.records) ids.push_back(r.id);
    manifest["record_ids"] = ids;

    Vec full, fg, clip;
    full.reserve(n * dim);
    fg.reserve(n * dim);
    Block aux;
    aux.rows = static_cast<std::uint32_t>(n);
    aux.cols = 2;
    for (const auto& r : data.records) {
        full.insert(full.end(), r.feat_full.begin(), r.feat_full.end());
        fg.insert(fg.end(), r.feat_fg.begin(), r.feat_fg.end());
        if (with_prior) clip.insert(clip.end(), r.z_clip->begin(), r.z_clip->end());
        aux.words.push_back(static_cast<std::uint32_t>(static_cast<std::int32_t>(r.label)));
        aux.words.push_back(std::bit_cast<std::uint32_t>(static_cast<float>(r.area_ratio)));
    }

    write_block(dir / "feat_full.bin", Block::from_floats(n, dim, full));
    write_block(dir / "feat_fg.bin", Block::from_floats(n, dim, fg));
    write_block(dir / "bank_backbone.bin", Block::from_mat(data.banks.feats_backbone));
    write_block(dir / "bank_prior.bin", Block::from_mat(data.banks.feats_prior));
    write_block(dir / "aux.bin", aux);
    if (with_prior) {
        write_block(dir / "z_clip.bin", Block::from_floats(n, classes, clip));
    } else {
        fs::remove(dir / "z_clip.bin");
    }

    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

namespace {

void expect_shape(const Block& b, std::size_t rows, std::size_t cols, const std::string& name) {
    if (b.rows != rows || b.cols != cols) {
        std::ostringstream msg;
        msg << name << ": block is " << b.rows << "x" << b.cols << ", manifest expects " << rows << "x" << cols;
        throw FormatError(msg.str());
    }
}

Vec block_row(const Block& b, std::size_t r) {
    Vec v(b.cols);
    for (std::size_t c = 0; c < b.cols; ++c) v[c] = static_cast<double>(b.float_at(r * b.cols + c));
    return v;
}

void fix_unit(Vec& v, const std::string& what, std::vector<std::string>& warnings) {
    const double n = norm(v);
    const double dev = std::abs(n - 1.0);
    if (dev <= kUnitKeepTol) return;
    if (dev > kUnitFixTol) {
        std::ostringstream msg;
        msg << what << " deviates from unit norm by " << dev;
        throw ValidationError(msg.str());
    }
    std::ostringstream msg;
    msg << what << " renormalised (norm " << n << ")";
    warnings.push_back(msg.str());
    for (double& x : v) x /= n;
}

}  // namespace

ReadResult read_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw FormatError("missing manifest.txt in " + dir.string());
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest.txt: ") + e.what());
    }

    ReadResult result;
    Dataset& data = result.data;
    try {
        if (m.at("format").get<std::string>() != "FVGE") throw FormatError("manifest: format is not FVGE");
        if (m.at("version").get<std::uint32_t>() != kFvgeVersion) throw FormatError("manifest: unsupported version");
        const auto dim = m.at("dim").get<std::size_t>();
        const auto classes = m.at("class_count").get<std::size_t>();
        const auto n = m.at("record_count").get<std::size_t>();
        data.train_count = m.at("train_count").get<std::size_t>();
        data.split.shots = m.at("shots").get<std::size_t>();
        data.split.base_classes = m.at("base_classes").get<std::vector<std::size_t>>();
        data.split.new_classes = m.at("new_classes").get<std::vector<std::size_t>>();
        data.banks.names = m.at("class_names").get<std::vector<std::string>>();
        const auto ids = m.at("record_ids").get<std::vector<std::string>>();
        const bool with_prior = m.at("has_z_clip").get<bool>();
        if (ids.size() != n) throw FormatError("manifest: record_ids length differs from record_count");
        if (data.banks.names.size() != classes) throw FormatError("manifest: class_names length differs from class_count");

        const Block full = read_block(dir / "feat_full.bin");
        const Block fg = read_block(dir / "feat_fg.bin");
        const Block bank_b = read_block(dir / "bank_backbone.bin");
        const Block bank_p = read_block(dir / "bank_prior.bin");
        const Block aux = read_block(dir / "aux.bin");
        expect_shape(full, n, dim, "feat_full.bin");
        expect_shape(fg, n, dim, "feat_fg.bin");
        expect_shape(bank_b, classes, dim, "bank_backbone.bin");
        expect_shape(bank_p, classes, dim, "bank_prior.bin");
        expect_shape(aux, n, 2, "aux.bin");
        std::optional<Block> clip;
        if (with_prior) {
            clip = read_block(dir / "z_clip.bin");
            expect_shape(*clip, n, classes, "z_clip.bin");
        }

        data.banks.feats_backbone = bank_b.to_mat();
        data.banks.feats_prior = bank_p.to_mat();
        for (std::size_t c = 0; c < classes; ++c) {
            for (Mat* bank : {&data.banks.feats_backbone, &data.banks.feats_prior}) {
                Vec row(bank->row(c).begin(), bank->row(c).end());
                fix_unit(row, "bank row " + std::to_string(c), result.warnings);
                std::copy(row.begin(), row.end(), bank->row(c).begin());
            }
        }

        data.records.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            SampleRecord& r = data.records[i];
            r.id = ids[i];
            const auto label = static_cast<std::int32_t>(aux.words[2 * i]);
            if (label < 0) throw FormatError("record '" + r.id + "': negative label");
            r.label = static_cast<std::size_t>(label);
            r.area_ratio = static_cast<double>(aux.float_at(2 * i + 1));
            r.feat_full = block_row(full, i);
            r.feat_fg = block_row(fg, i);
            fix_unit(r.feat_full, "record '" + r.id + "' feat_full", result.warnings);
            fix_unit(r.feat_fg, "record '" + r.id + "' feat_fg", result.warnings);
            if (clip) r.z_clip = block_row(*clip, i);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest.txt: ") + e.what());
    }
    validate_dataset(data);
    return result;
}

Dataset synth_generate(const SynthParams& p) {
    if (p.classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (p.dim < 4) throw ConfigError("synth: need dim >= 4");
    if (p.shots == 0) throw ConfigError("synth: shots must be positive");
    if (!(p.fg_advantage >= 0.0 && p.fg_advantage <= 1.0)) throw ConfigError("synth: fg_advantage must lie in [0,1]");
    if (!(p.noise >= 0.0) || !std::isfinite(p.noise)) throw ConfigError("synth: noise must be non-negative");
    if (!(p.logit_scale > 0.0)) throw ConfigError("synth: logit scale must be positive");

    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t dim = p.dim;
    const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(dim));

    auto gaussian = [&](double scale) {
        Vec v(dim);
        for (double& x : v) x = scale * gauss(rng);
        return v;
    };
    auto random_unit = [&] { return l2_normalize(gaussian(1.0)); };

    const Vec background = random_unit();
    std::vector<Vec> prototypes;
    for (std::size_t c = 0; c < p.classes; ++c) {
        const double tilt = 2.0 * unit(rng) - 1.0;
        Vec v = random_unit();
        add_into(v, background, tilt);
        prototypes.push_back(l2_normalize(v));
    }

    Dataset data;
    const std::size_t n_base = (p.classes + 1) / 2;
    for (std::size_t c = 0; c < p.classes; ++c) {
        (c < n_base ? data.split.base_classes : data.split.new_classes).push_back(c);
    }
    data.split.shots = p.shots;

    data.banks.feats_backbone = Mat(p.classes, dim);
    data.banks.feats_prior = Mat(p.classes, dim);
    for (std::size_t c = 0; c < p.classes; ++c) {
        std::ostringstream name;
        name << "class_" << (c < 10 ? "0" : "") << c;
        data.banks.names.push_back(name.str());
        const double bank_noise = c < n_base ? kBankNoiseBase : kBankNoiseNew;
        Vec tuned = prototypes[c];
        add_into(tuned, gaussian(bank_noise * inv_sqrt_dim));
        Vec prior = prototypes[c];
        add_into(prior, gaussian(kBankNoisePrior * inv_sqrt_dim));
        const Vec tuned_u = rounded(l2_normalize(tuned));
        const Vec prior_u = rounded(l2_normalize(prior));
        std::copy(tuned_u.begin(), tuned_u.end(), data.banks.feats_backbone.row(c).begin());
        std::copy(prior_u.begin(), prior_u.end(), data.banks.feats_prior.row(c).begin());
    }

    auto make_sample = [&](std::size_t label, std::string id) {
        SampleRecord r;
        r.id = std::move(id);
        r.label = label;
        const double area = 0.1 + 0.8 * unit(rng);
        const double bg = kBackgroundStrength * p.fg_advantage * (1.0 - area);
        const bool bad_mask = unit(rng) < 0.5 * (1.0 - area);

        Vec fg = prototypes[label];
        add_into(fg, gaussian(p.noise));
        const Vec mask_error = random_unit();
        if (bad_mask) add_into(fg, mask_error, kMaskErrorStrength * p.fg_advantage);

        Vec full = prototypes[label];
        add_into(full, gaussian(p.noise));
        add_into(full, background, bg);

        Vec prior_view = prototypes[label];
        add_into(prior_view, gaussian(p.noise));
        add_into(prior_view, background, kPriorBackgroundShare * bg);

        r.area_ratio = round_f32(area);
        r.feat_fg = rounded(l2_normalize(fg));
        r.feat_full = rounded(l2_normalize(full));
        r.z_clip = rounded(backbone_logits(l2_normalize(prior_view), data.banks.feats_prior, p.logit_scale));
        return r;
    };

    for (std::size_t c : data.split.base_classes) {
        for (std::size_t k = 0; k < p.shots; ++k) {
            data.records.push_back(make_sample(c, "train-" + std::to_string(c) + "-" + std::to_string(k)));
        }
    }
    data.train_count = data.records.size();
    for (std::size_t c = 0; c < p.classes; ++c) {
        for (std::size_t k = 0; k < p.test_per_class; ++k) {
            data.records.push_back(make_sample(c, "test-" + std::to_string(c) + "-" + std::to_string(k)));
        }
    }
    return data;
}

}  // namespace fvg
