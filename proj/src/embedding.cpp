#include "simrec/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <json.hpp>

#include "simrec/http_util.hpp"

namespace simrec::emb {

using nlohmann::json;

// --- providers -------------------------------------------------------------

HashProvider::HashProvider(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
    if (dim <= 0) throw ConfigError("HashProvider: dimension must be positive");
}

std::vector<Vector> HashProvider::embed(const std::vector<std::string>& texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        Vector v(dim_);
        std::uint64_t key = mix_seed(seed_, fnv1a(text));
        for (int j = 0; j < dim_; ++j) {
            std::uint64_t bits = splitmix64(key + static_cast<std::uint64_t>(j));
            // top 53 bits -> uniform double in [0, 1), recentered to [-1, 1)
            double u = static_cast<double>(bits >> 11) * (1.0 / 9007199254740992.0);
            v[j] = 2.0 * u - 1.0;
        }
        double norm = v.norm();
        if (norm > 0.0) v /= norm;
        out.push_back(std::move(v));
    }
    return out;
}

FileProvider::FileProvider(const std::filesystem::path& path) {
    bool header_seen = false;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw InputError(path.string() + ":" + std::to_string(n) + ": invalid JSON");
        if (!header_seen) {
            if (j.value("format", "") != "simrec-embcache")
                throw InputError(path.string() + ": missing embedding file header");
            dim_ = j.at("dim").get<int>();
            header_seen = true;
            return;
        }
        Vector v(dim_);
        const auto& arr = j.at("v");
        if (static_cast<int>(arr.size()) != dim_)
            throw ConfigError(path.string() + ":" + std::to_string(n) + ": dimension mismatch");
        for (int i = 0; i < dim_; ++i) v[i] = arr[i].get<double>();
        vectors_[j.at("k").get<std::string>()] = std::move(v);
    });
    if (!header_seen) throw InputError(path.string() + ": empty embedding file");
}

std::vector<Vector> FileProvider::embed(const std::vector<std::string>& texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        auto it = vectors_.find(t);
        if (it == vectors_.end())
            throw InputError("file embedding provider has no vector for keyword: " + t);
        out.push_back(it->second);
    }
    return out;
}

RemoteProviderConfig remote_config_from_env() {
    RemoteProviderConfig cfg;
    if (const char* url = std::getenv("SIMREC_EMB_URL")) cfg.url = url;
    if (const char* model = std::getenv("SIMREC_EMB_MODEL")) cfg.model = model;
    if (const char* key = std::getenv("SIMREC_EMB_KEY")) cfg.api_key = key;
    return cfg;
}

RemoteProvider::RemoteProvider(RemoteProviderConfig config) : config_(std::move(config)) {
    if (config_.url.empty())
        throw ConfigError("embedding endpoint URL not configured (SIMREC_EMB_URL)");
    auto scheme_end = config_.url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("endpoint URL missing scheme: " + config_.url);
    auto path_start = config_.url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        host_ = config_.url;
        path_ = "/";
    } else {
        host_ = config_.url.substr(0, path_start);
        path_ = config_.url.substr(path_start);
    }
}

std::vector<Vector> RemoteProvider::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) return {};
    json body;
    body["model"] = config_.model;
    body["input"] = texts;
    std::string raw = http_post_json(host_, path_, config_.api_key, body.dump(),
                                     config_.connect_timeout_s, config_.read_timeout_s);
    json reply = json::parse(raw, nullptr, false);
    if (reply.is_discarded() || !reply.contains("data") ||
        reply["data"].size() != texts.size())
        throw BackendError("embedding endpoint returned unexpected payload");
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& entry : reply["data"]) {
        const auto& arr = entry.at("embedding");
        if (static_cast<int>(arr.size()) != config_.dim)
            throw ConfigError("embedding endpoint dimension " + std::to_string(arr.size()) +
                              " does not match configured " + std::to_string(config_.dim));
        Vector v(config_.dim);
        for (int i = 0; i < config_.dim; ++i) v[i] = arr[i].get<double>();
        out.push_back(std::move(v));
    }
    return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const std::string& selector, int dim) {
    if (starts_with_icase(selector, "hash:")) {
        std::uint64_t seed = 0;
        try {
            seed = std::stoull(selector.substr(5));
        } catch (const std::exception&) {
            throw ConfigError("invalid hash provider seed in selector: " + selector);
        }
        return std::make_unique<HashProvider>(seed, dim);
    }
    if (starts_with_icase(selector, "file:"))
        return std::make_unique<FileProvider>(selector.substr(5));
    if (selector == "remote") {
        RemoteProviderConfig cfg = remote_config_from_env();
        cfg.dim = dim;
        return std::make_unique<RemoteProvider>(cfg);
    }
    throw ConfigError("unknown embedding provider selector: " + selector +
                      " (expected hash:<seed>, file:<path>, or remote)");
}

// --- cache -------------------------------------------------------------------

std::size_t EmbeddingCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

bool EmbeddingCache::contains(const std::string& keyword) const {
    std::lock_guard lock(mutex_);
    return entries_.count(keyword) > 0;
}

std::vector<Vector> EmbeddingCache::get_or_fetch(const std::vector<std::string>& keywords,
                                                 EmbeddingProvider& provider) {
    if (provider.dim() != dim_)
        throw ConfigError("embedding cache dimension " + std::to_string(dim_) +
                          " does not match provider dimension " + std::to_string(provider.dim()));
    std::set<std::string> missing;
    {
        std::lock_guard lock(mutex_);
        for (const auto& kw : keywords)
            if (!entries_.count(kw)) missing.insert(kw);
    }
    if (!missing.empty()) {
        std::vector<std::string> batch(missing.begin(), missing.end());
        std::vector<Vector> fetched = provider.embed(batch);
        if (fetched.size() != batch.size())
            throw BackendError("embedding provider returned wrong batch size");
        std::lock_guard lock(mutex_);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (fetched[i].size() != dim_)
                throw ConfigError("embedding provider vector dimension mismatch");
            if (!fetched[i].allFinite())
                throw BackendError("embedding provider returned non-finite vector");
            entries_[batch[i]] = std::move(fetched[i]);
        }
    }
    std::vector<Vector> out;
    out.reserve(keywords.size());
    std::lock_guard lock(mutex_);
    for (const auto& kw : keywords) out.push_back(entries_.at(kw));
    return out;
}

void EmbeddingCache::save(const std::filesystem::path& path) const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> lines;
    lines.reserve(entries_.size() + 1);
    json header;
    header["format"] = "simrec-embcache";
    header["version"] = 1;
    header["dim"] = dim_;
    lines.push_back(header.dump());
    for (const auto& [kw, v] : entries_) {
        json j;
        j["k"] = kw;
        json arr = json::array();
        for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
        j["v"] = std::move(arr);
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path) {
    std::optional<EmbeddingCache> cache;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw InputError(path.string() + ":" + std::to_string(n) + ": invalid JSON");
        if (!cache) {
            if (j.value("format", "") != "simrec-embcache")
                throw InputError(path.string() + ": missing embedding cache header");
            cache.emplace(j.at("dim").get<int>());
            return;
        }
        const auto& arr = j.at("v");
        if (static_cast<int>(arr.size()) != cache->dim_)
            throw ConfigError(path.string() + ":" + std::to_string(n) +
                              ": cached vector dimension mismatch");
        Vector v(cache->dim_);
        for (int i = 0; i < cache->dim_; ++i) v[i] = arr[i].get<double>();
        cache->entries_[j.at("k").get<std::string>()] = std::move(v);
    });
    if (!cache) throw InputError(path.string() + ": empty embedding cache");
    return std::move(*cache);
}

// --- pooling and similarity -----------------------------------------------------

namespace {

std::optional<Vector> pool_keywords(const std::set<std::string>& keywords, EmbeddingCache& cache,
                                    EmbeddingProvider& provider) {
    if (keywords.empty()) return std::nullopt;
    std::vector<std::string> list(keywords.begin(), keywords.end());
    std::vector<Vector> vectors = cache.get_or_fetch(list, provider);
    Vector mean = Vector::Zero(cache.dim());
    for (const auto& v : vectors) mean += v;
    mean /= static_cast<double>(vectors.size());
    return mean;
}

}  // namespace

ProfileEmbedding pool_profile(const distill::ItemProfile& profile, EmbeddingCache& cache,
                              EmbeddingProvider& provider) {
    ProfileEmbedding out;
    out.item_id = profile.item_id;
    out.e_pos = pool_keywords(profile.pros, cache, provider);
    out.e_neg = pool_keywords(profile.cons, cache, provider);
    return out;
}

double cosine(const Vector& u, const Vector& v) {
    if (u.size() != v.size())
        throw ConfigError("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
    double nu = u.norm();
    double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return u.dot(v) / (nu * nv);
}

// --- profile embedding store ------------------------------------------------------

EmbeddingStore::EmbeddingStore(std::vector<ProfileEmbedding> embeddings)
    : embeddings_(std::move(embeddings)) {
    for (std::size_t i = 0; i < embeddings_.size(); ++i) index_[embeddings_[i].item_id] = i;
}

const ProfileEmbedding* EmbeddingStore::find(const std::string& item_id) const {
    auto it = index_.find(item_id);
    return it == index_.end() ? nullptr : &embeddings_[it->second];
}

void save_profile_embeddings_jsonl(const std::filesystem::path& path,
                                   const std::vector<ProfileEmbedding>& embeddings, int dim) {
    std::vector<std::string> lines;
    lines.reserve(embeddings.size() + 1);
    json header;
    header["format"] = "simrec-profile-embeddings";
    header["version"] = 1;
    header["dim"] = dim;
    lines.push_back(header.dump());
    auto vec_json = [](const std::optional<Vector>& v) {
        if (!v) return json();
        json arr = json::array();
        for (int i = 0; i < v->size(); ++i) arr.push_back((*v)[i]);
        return arr;
    };
    for (const auto& e : embeddings) {
        json j;
        j["item_id"] = e.item_id;
        j["e_pos"] = vec_json(e.e_pos);
        j["e_neg"] = vec_json(e.e_neg);
        lines.push_back(j.dump());
    }
    write_lines(path, lines);
}

std::vector<ProfileEmbedding> load_profile_embeddings_jsonl(const std::filesystem::path& path) {
    std::vector<ProfileEmbedding> out;
    int dim = -1;
    for_each_line(path, [&](std::size_t n, const std::string& line) {
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw InputError(path.string() + ":" + std::to_string(n) + ": invalid JSON");
        if (dim < 0) {
            if (j.value("format", "") != "simrec-profile-embeddings")
                throw InputError(path.string() + ": missing profile embedding header");
            dim = j.at("dim").get<int>();
            return;
        }
        auto vec_from = [&](const json& arr) -> std::optional<Vector> {
            if (arr.is_null()) return std::nullopt;
            if (static_cast<int>(arr.size()) != dim)
                throw ConfigError(path.string() + ":" + std::to_string(n) +
                                  ": vector dimension mismatch");
            Vector v(dim);
            for (int i = 0; i < dim; ++i) v[i] = arr[i].get<double>();
            return v;
        };
        ProfileEmbedding e;
        e.item_id = j.at("item_id").get<std::string>();
        e.e_pos = vec_from(j.at("e_pos"));
        e.e_neg = vec_from(j.at("e_neg"));
        out.push_back(std::move(e));
    });
    if (dim < 0) throw InputError(path.string() + ": empty profile embedding file");
    return out;
}

}  // namespace simrec::emb
