#include "rnd/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rnd/errors.hpp"
#include "rnd/rng.hpp"

namespace rnd {

static_assert(std::endian::native == std::endian::little, "weight archives are little-endian float32");

namespace {

constexpr std::string_view kMagic = "RNDW 1";

std::string join_shape(const std::vector<int>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(shape[i]);
    }
    return s;
}

std::vector<int> parse_shape(const std::string& s) {
    std::vector<int> shape;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) shape.push_back(std::stoi(part));
    return shape;
}

}  // namespace

void WeightArchive::add(std::string name, std::vector<int> shape, std::vector<float> data) {
    if (find(name)) throw InputError("duplicate tensor " + name);
    tensors_.push_back({std::move(name), std::move(shape), std::move(data)});
}

void WeightArchive::store(std::string_view prefix, std::span<nn::Param<float>* const> params) {
    for (const auto* p : params) add(std::string(prefix) + p->name, p->shape, p->value);
}

void WeightArchive::restore(std::string_view prefix, std::span<nn::Param<float>* const> params) const {
    for (auto* p : params) {
        const std::string name = std::string(prefix) + p->name;
        const TensorRecord* rec = find(name);
        if (!rec) throw ConfigError("weights missing tensor " + name);
        if (rec->shape != p->shape) {
            throw ConfigError("shape mismatch for " + name + ": file has [" + join_shape(rec->shape) +
                              "], model expects [" + join_shape(p->shape) + "]");
        }
        p->value = rec->data;
    }
}

const TensorRecord* WeightArchive::find(std::string_view name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void WeightArchive::save(const std::filesystem::path& path) const {
    std::ostringstream header;
    header << kMagic << '\n' << "tensors " << tensors_.size() << '\n';
    std::size_t offset = 0;
    for (const auto& t : tensors_) {
        const std::size_t bytes = t.data.size() * sizeof(float);
        header << t.name << '\t' << "float32" << '\t' << join_shape(t.shape) << '\t' << offset << '\t' << bytes
               << '\n';
        offset += bytes;
    }
    header << "end\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifact("cannot write " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : tensors_) {
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw MissingArtifact("write failed: " + path.string());
}

WeightArchive WeightArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open weights " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kMagic) throw ConfigError(path.string() + " is not a weight archive");
    std::getline(in, line);
    std::size_t count = 0;
    if (std::sscanf(line.c_str(), "tensors %zu", &count) != 1) throw ConfigError("bad archive header");

    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::size_t offset, bytes;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < count; ++i) {
        std::getline(in, line);
        std::stringstream ss(line);
        Entry e;
        std::string dtype, shape;
        std::getline(ss, e.name, '\t');
        std::getline(ss, dtype, '\t');
        std::getline(ss, shape, '\t');
        ss >> e.offset >> e.bytes;
        if (dtype != "float32" || !ss) throw ConfigError("bad archive entry: " + line);
        e.shape = parse_shape(shape);
        entries.push_back(std::move(e));
    }
    std::getline(in, line);
    if (line != "end") throw ConfigError("archive header not terminated");
    const auto payload = in.tellg();

    WeightArchive archive;
    for (auto& e : entries) {
        std::size_t expect = sizeof(float);
        for (int d : e.shape) expect *= static_cast<std::size_t>(d);
        if (expect != e.bytes) throw ConfigError("tensor " + e.name + " byte count disagrees with shape");
        std::vector<float> data(e.bytes / sizeof(float));
        in.seekg(payload + static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(e.bytes));
        if (!in) throw ConfigError("truncated archive " + path.string());
        archive.add(std::move(e.name), std::move(e.shape), std::move(data));
    }
    return archive;
}

nn::EncoderConfig default_encoder_config() {
    nn::EncoderConfig cfg;
    cfg.in_channels = 3;
    cfg.widths = {16, 32, 64};
    cfg.strides = {2, 2, 2};
    cfg.inner_kernels = {1, 1, 3};
    return cfg;
}

AuxClassifier::AuxClassifier(const nn::EncoderConfig& cfg)
    : encoder(cfg, "encoder"), classifier("classifier", cfg.widths[nn::kStages - 1], kAuxClasses) {}

std::vector<nn::Param<float>*> AuxClassifier::params() {
    auto p = encoder.params();
    p.push_back(&classifier.weight);
    p.push_back(&classifier.bias);
    return p;
}

void save_pretrained(const std::filesystem::path& path, AuxClassifier& model) {
    WeightArchive archive;
    auto params = model.params();
    archive.store("", params);
    archive.save(path);
}

Teacher build_teacher(const std::filesystem::path& pretrained, std::uint64_t head_seed, bool use_head,
                      const nn::EncoderConfig& cfg) {
    const WeightArchive archive = WeightArchive::load(pretrained);
    AuxClassifier aux(cfg);
    auto params = aux.params();
    archive.restore("", params);

    Teacher t{nn::Network<float>(cfg, use_head), aux.classifier};
    auto src = aux.encoder.params();
    std::vector<const nn::Param<float>*> csrc(src.begin(), src.end());
    nn::copy_parameters<float, float>(csrc, t.net.encoder.params());
    t.net.encoder.set_trainable(false);
    t.classifier.weight.trainable = false;
    t.classifier.bias.trainable = false;
    Rng rng = make_rng(head_seed, {tag("teacher-head")});
    t.net.head.init(rng);
    return t;
}

nn::Network<float> build_student(std::uint64_t seed, bool use_head, const nn::EncoderConfig& cfg) {
    nn::Network<float> net(cfg, use_head);
    Rng rng = make_rng(seed, {tag("student-init")});
    net.encoder.init(rng);
    net.head.init(rng);
    return net;
}

FeatureVector feature_readout(const nn::Network<float>& net, const Image& img) {
    bool degenerate = false;
    FeatureMatrix m = readout_images(net, std::span<const Image>(&img, 1), 1, &degenerate);
    FeatureVector fv;
    fv.values.assign(m.data(), m.data() + m.cols());
    fv.offsets = net.block_offsets();
    fv.degenerate = degenerate;
    return fv;
}

FeatureMatrix readout_images(const nn::Network<float>& net, std::span<const Image> images, int chunk,
                             bool* degenerate) {
    FeatureMatrix out(static_cast<Eigen::Index>(images.size()), net.feature_dim());
    nn::ReadoutCache<float> cache;
    bool any = false;
    for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t count = std::min(images.size() - start, static_cast<std::size_t>(chunk));
        auto batch = to_batch<float>(images.subspan(start, count));
        FeatureMatrix f = nn::readout_forward(net, batch, &cache);
        any |= cache.degenerate;
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = f;
    }
    if (degenerate) *degenerate = any;
    return out;
}

}  // namespace rnd
