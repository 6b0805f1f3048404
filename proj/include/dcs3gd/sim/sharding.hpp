#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/models.hpp"
#include "dcs3gd/random.hpp"

namespace dcs3gd {

// One worker's slice of the training data. `stream_id` keys the per-epoch
// shuffle; shards that share samples and stream id yield identical batches.
struct Shard {
    Dataset samples;
    std::uint64_t stream_id = 0;
};

class ShardedDataset {
public:
    ShardedDataset() = default;
    explicit ShardedDataset(std::vector<Shard> shards) : shards_(std::move(shards)) {}

    /// Contiguous equal shards by worker index; the n % n_workers trailing
    /// samples are dropped.
    static ShardedDataset contiguous(const Dataset& data, std::size_t n_workers) {
        if (n_workers == 0) throw InvalidArgument("contiguous: n_workers must be >= 1");
        const std::size_t per = data.size() / n_workers;
        if (per == 0) throw InvalidArgument("contiguous: fewer samples than workers");
        std::vector<Shard> shards(n_workers);
        for (std::size_t i = 0; i < n_workers; ++i) {
            const auto begin = data.begin() + static_cast<std::ptrdiff_t>(i * per);
            shards[i].samples.assign(begin, begin + static_cast<std::ptrdiff_t>(per));
            shards[i].stream_id = i;
        }
        return ShardedDataset(std::move(shards));
    }

    /// Every worker gets the full dataset with the same shuffle stream.
    static ShardedDataset replicated(const Dataset& data, std::size_t n_workers) {
        std::vector<Shard> shards(n_workers, Shard{data, 0});
        return ShardedDataset(std::move(shards));
    }

    std::size_t size() const noexcept { return shards_.size(); }
    const Shard& operator[](std::size_t i) const { return shards_.at(i); }

    std::size_t min_shard_size() const noexcept {
        if (shards_.empty()) return 0;
        std::size_t m = shards_.front().samples.size();
        for (const auto& s : shards_) m = std::min(m, s.samples.size());
        return m;
    }

    /// Full batches per epoch for the smallest shard (partial batches dropped).
    std::size_t iterations_per_epoch(std::size_t local_batch_size) const noexcept {
        return local_batch_size == 0 ? 0 : min_shard_size() / local_batch_size;
    }

private:
    std::vector<Shard> shards_;
};

// Walks a shard in per-epoch shuffled order. The permutation for epoch e is
// a function of (seed, stream id, e) only, so cursors are replayable.
class BatchCursor {
public:
    BatchCursor(const Shard& shard, std::size_t batch_size, std::uint64_t seed, bool wraparound = true)
        : original_(shard.samples),
          current_(shard.samples),
          batch_size_(batch_size),
          seed_(seed),
          stream_id_(shard.stream_id),
          wraparound_(wraparound) {
        if (batch_size_ == 0) throw InvalidArgument("batch size must be >= 1");
        if (original_.size() < batch_size_)
            throw InvalidArgument("shard of " + std::to_string(original_.size()) + " samples cannot fill a batch of " +
                                  std::to_string(batch_size_));
        reshuffle();
    }

    std::span<const Sample> next_batch() {
        if (position_ + batch_size_ > current_.size()) {
            if (!wraparound_)
                throw ShardExhausted("shard " + std::to_string(stream_id_) + " exhausted after epoch " +
                                     std::to_string(epoch_));
            ++epoch_;
            position_ = 0;
            reshuffle();
        }
        std::span<const Sample> batch(current_.data() + position_, batch_size_);
        position_ += batch_size_;
        return batch;
    }

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t position() const noexcept { return position_; }

private:
    void reshuffle() {
        current_ = original_;
        Rng rng(mix_seed(seed_, stream_id_, epoch_));
        rng.shuffle(current_);
    }

    Dataset original_;
    Dataset current_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    bool wraparound_;
    std::size_t epoch_ = 0;
    std::size_t position_ = 0;
};

}  // namespace dcs3gd
