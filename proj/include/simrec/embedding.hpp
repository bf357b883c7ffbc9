#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "simrec/common.hpp"
#include "simrec/distill.hpp"

namespace simrec::emb {

using Vector = Eigen::VectorXd;

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual int dim() const = 0;
    virtual std::vector<Vector> embed(const std::vector<std::string>& texts) = 0;
    virtual std::string name() const = 0;
};

/// Seeded-hash random-projection backend: each keyword maps to a fixed
/// pseudo-random unit vector. Fully offline and bit-reproducible.
class HashProvider : public EmbeddingProvider {
public:
    HashProvider(std::uint64_t seed, int dim);
    int dim() const override { return dim_; }
    std::vector<Vector> embed(const std::vector<std::string>& texts) override;
    std::string name() const override { return "hash"; }

private:
    std::uint64_t seed_;
    int dim_;
};

/// Precomputed-vectors file backend (JSONL keyword map with a header record).
class FileProvider : public EmbeddingProvider {
public:
    explicit FileProvider(const std::filesystem::path& path);
    int dim() const override { return dim_; }
    std::vector<Vector> embed(const std::vector<std::string>& texts) override;
    std::string name() const override { return "file"; }

private:
    std::map<std::string, Vector> vectors_;
    int dim_ = 0;
};

struct RemoteProviderConfig {
    std::string url;
    std::string model;
    std::string api_key;
    int dim = 384;
    int connect_timeout_s = 10;
    int read_timeout_s = 120;
};

/// HTTP embedding endpoint: posts {model, input:[...]}, reads
/// {data:[{embedding:[...]}]}.
class RemoteProvider : public EmbeddingProvider {
public:
    explicit RemoteProvider(RemoteProviderConfig config);
    int dim() const override { return config_.dim; }
    std::vector<Vector> embed(const std::vector<std::string>& texts) override;
    std::string name() const override { return "remote"; }

private:
    RemoteProviderConfig config_;
    std::string host_;
    std::string path_;
};

RemoteProviderConfig remote_config_from_env();

/// Selector grammar: "hash:<seed>", "file:<path>", "remote".
std::unique_ptr<EmbeddingProvider> make_provider(const std::string& selector, int dim = 384);

/// Keyword -> vector cache with JSONL persistence. Hits are plain map reads;
/// misses go to the provider and are appended through one writer path.
class EmbeddingCache {
public:
    explicit EmbeddingCache(int dim) : dim_(dim) {}
    EmbeddingCache(EmbeddingCache&& other) noexcept
        : dim_(other.dim_), entries_(std::move(other.entries_)) {}
    EmbeddingCache& operator=(EmbeddingCache&& other) noexcept {
        dim_ = other.dim_;
        entries_ = std::move(other.entries_);
        return *this;
    }

    int dim() const { return dim_; }
    std::size_t size() const;
    bool contains(const std::string& keyword) const;

    /// One vector per keyword, cache-first. Provider is only consulted for
    /// misses (in sorted order, one batched call).
    std::vector<Vector> get_or_fetch(const std::vector<std::string>& keywords,
                                     EmbeddingProvider& provider);

    void save(const std::filesystem::path& path) const;
    static EmbeddingCache load(const std::filesystem::path& path);

private:
    int dim_;
    std::map<std::string, Vector> entries_;
    mutable std::mutex mutex_;
};

struct ProfileEmbedding {
    std::string item_id;
    std::optional<Vector> e_pos;  // absent iff D_pos empty
    std::optional<Vector> e_neg;
};

/// Componentwise mean of the profile's keyword vectors per polarity.
ProfileEmbedding pool_profile(const distill::ItemProfile& profile, EmbeddingCache& cache,
                              EmbeddingProvider& provider);

/// u.v / (|u||v|); 0 when either norm is zero. Throws on dimension mismatch.
double cosine(const Vector& u, const Vector& v);

class EmbeddingStore {
public:
    EmbeddingStore() = default;
    explicit EmbeddingStore(std::vector<ProfileEmbedding> embeddings);

    const ProfileEmbedding* find(const std::string& item_id) const;
    const std::vector<ProfileEmbedding>& all() const { return embeddings_; }

private:
    std::vector<ProfileEmbedding> embeddings_;
    std::map<std::string, std::size_t> index_;
};

void save_profile_embeddings_jsonl(const std::filesystem::path& path,
                                   const std::vector<ProfileEmbedding>& embeddings, int dim);
std::vector<ProfileEmbedding> load_profile_embeddings_jsonl(const std::filesystem::path& path);

}  // namespace simrec::emb
