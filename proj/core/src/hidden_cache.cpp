#include "factprobe/hidden_cache.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <array>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>

namespace factprobe {

namespace {

constexpr std::array<char, 4> kMagic{'H', 'S', 'C', '1'};
constexpr std::array<char, 4> kIndexMagic{'H', 'S', 'I', '1'};
constexpr std::uint32_t kMaxDim = 1u << 20;
constexpr std::size_t kRecordHeader = 12;  // key + dim
constexpr std::size_t kRecordTrailer = 4;  // crc32

static_assert(std::endian::native == std::endian::little,
              "cache I/O assumes a little-endian host");

template <typename T>
void put(std::vector<unsigned char>& buf, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.insert(buf.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

std::uint32_t crc(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

bool pread_all(int fd, void* buf, std::size_t n, std::uint64_t offset) {
  auto* p = static_cast<unsigned char*>(buf);
  while (n > 0) {
    const ssize_t r = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    p += r;
    n -= static_cast<std::size_t>(r);
    offset += static_cast<std::uint64_t>(r);
  }
  return true;
}

std::filesystem::path index_path(const std::filesystem::path& p) {
  auto out = p;
  out += ".idx";
  return out;
}

}  // namespace

std::uint64_t HiddenStateCache::make_key(std::string_view backend_id,
                                         std::uint64_t source_text_hash) {
  return mix64(fnv1a64(backend_id) ^ mix64(source_text_hash));
}

void HiddenStateCache::clear(const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::remove(path, ec);
  std::filesystem::remove(index_path(path), ec);
}

HiddenStateCache::HiddenStateCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) {
    throw ValidationError("cannot open cache " + path_.string() + ": " + std::strerror(errno));
  }
  struct stat st {};
  ::fstat(fd_, &st);
  if (st.st_size == 0) {
    if (::write(fd_, kMagic.data(), kMagic.size()) != static_cast<ssize_t>(kMagic.size())) {
      ::close(fd_);
      throw ValidationError("cannot initialise cache " + path_.string());
    }
    end_ = kMagic.size();
    index_dirty_ = true;
  } else {
    std::array<char, 4> magic{};
    if (st.st_size < 4 || !pread_all(fd_, magic.data(), 4, 0) || magic != kMagic) {
      ::close(fd_);
      throw ValidationError(path_.string() + " is not a hidden-state cache");
    }
    end_ = static_cast<std::uint64_t>(st.st_size);
    if (!load_index()) scan();
  }
  stats_.file_bytes = end_;
}

HiddenStateCache::~HiddenStateCache() {
  if (fd_ >= 0) {
    if (index_dirty_) {
      try {
        write_index();
      } catch (...) {
        // The index is rebuildable from the log.
      }
    }
    ::close(fd_);
  }
}

bool HiddenStateCache::load_index() {
  std::ifstream in(index_path(path_), std::ios::binary);
  if (!in) return false;
  std::array<char, 4> magic{};
  std::uint64_t log_size = 0;
  std::uint64_t count = 0;
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char*>(&log_size), 8);
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in || magic != kIndexMagic || log_size != end_) return false;
  std::unordered_map<std::uint64_t, std::uint64_t> idx;
  idx.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t key = 0;
    std::uint64_t off = 0;
    in.read(reinterpret_cast<char*>(&key), 8);
    in.read(reinterpret_cast<char*>(&off), 8);
    if (!in || off + kRecordHeader > end_) return false;
    idx[key] = off;
  }
  index_ = std::move(idx);
  stats_.records = index_.size();
  return true;
}

void HiddenStateCache::write_index() const {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kIndexMagic.begin(), kIndexMagic.end());
  put<std::uint64_t>(buf, end_);
  put<std::uint64_t>(buf, index_.size());
  for (const auto& [key, off] : index_) {
    put<std::uint64_t>(buf, key);
    put<std::uint64_t>(buf, off);
  }
  auto tmp = index_path(path_);
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ValidationError("cannot write cache index " + tmp.string());
  }
  std::filesystem::rename(tmp, index_path(path_));
  index_dirty_ = false;
}

void HiddenStateCache::scan() {
  index_.clear();
  stats_ = {};
  stats_.index_rebuilt = true;
  std::uint64_t off = kMagic.size();
  std::vector<unsigned char> rec;
  while (off < end_) {
    unsigned char head[kRecordHeader];
    if (end_ - off < kRecordHeader + kRecordTrailer || !pread_all(fd_, head, kRecordHeader, off)) {
      break;
    }
    const auto key = get<std::uint64_t>(head);
    const auto dim = get<std::uint32_t>(head + 8);
    const std::uint64_t len = kRecordHeader + 4ull * dim + kRecordTrailer;
    if (dim > kMaxDim || off + len > end_) break;
    rec.resize(len);
    if (!pread_all(fd_, rec.data(), len, off)) break;
    const auto stored = get<std::uint32_t>(rec.data() + len - kRecordTrailer);
    if (stored != crc(rec.data(), len - kRecordTrailer)) {
      ++stats_.corrupt;
      warn("cache " + path_.string() + ": checksum mismatch at offset " + std::to_string(off) +
           ", record skipped");
    } else {
      index_[key] = off;
    }
    off += len;
  }
  if (off < end_) {
    stats_.truncated_bytes = end_ - off;
    warn("cache " + path_.string() + ": dropping " + std::to_string(end_ - off) +
         " trailing bytes of an incomplete record");
    if (::ftruncate(fd_, static_cast<off_t>(off)) != 0) {
      throw ValidationError("cannot truncate cache " + path_.string());
    }
    end_ = off;
  }
  stats_.records = index_.size();
  index_dirty_ = true;
}

std::optional<std::vector<float>> HiddenStateCache::lookup(std::uint64_t key) const {
  std::uint64_t off = 0;
  {
    std::shared_lock lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    off = it->second;
  }
  unsigned char head[kRecordHeader];
  if (!pread_all(fd_, head, kRecordHeader, off)) return std::nullopt;
  const auto dim = get<std::uint32_t>(head + 8);
  if (get<std::uint64_t>(head) != key || dim > kMaxDim) {
    warn("cache " + path_.string() + ": index points at a foreign record; treating as miss");
    return std::nullopt;
  }
  const std::uint64_t len = kRecordHeader + 4ull * dim + kRecordTrailer;
  std::vector<unsigned char> rec(len);
  if (!pread_all(fd_, rec.data(), len, off)) return std::nullopt;
  if (get<std::uint32_t>(rec.data() + len - kRecordTrailer) != crc(rec.data(), len - kRecordTrailer)) {
    warn("cache " + path_.string() + ": checksum mismatch at offset " + std::to_string(off) +
         ", treating as miss");
    std::unique_lock lock(mutex_);
    ++stats_.corrupt;
    return std::nullopt;
  }
  std::vector<float> values(dim);
  std::memcpy(values.data(), rec.data() + kRecordHeader, 4ull * dim);
  return values;
}

void HiddenStateCache::insert(std::uint64_t key, std::span<const float> values) {
  if (values.size() > kMaxDim) throw ValidationError("hidden state too large for the cache");
  std::vector<unsigned char> rec;
  rec.reserve(kRecordHeader + 4 * values.size() + kRecordTrailer);
  put<std::uint64_t>(rec, key);
  put<std::uint32_t>(rec, static_cast<std::uint32_t>(values.size()));
  for (float v : values) put<float>(rec, v);
  put<std::uint32_t>(rec, crc(rec.data(), rec.size()));

  std::unique_lock lock(mutex_);
  std::size_t written = 0;
  while (written < rec.size()) {
    const ssize_t w = ::pwrite(fd_, rec.data() + written, rec.size() - written,
                               static_cast<off_t>(end_ + written));
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) {
      throw BackendError("cache write failed for " + path_.string() + ": " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(w);
  }
  index_[key] = end_;
  end_ += rec.size();
  stats_.records = index_.size();
  stats_.file_bytes = end_;
  index_dirty_ = true;
}

std::size_t HiddenStateCache::size() const {
  std::shared_lock lock(mutex_);
  return index_.size();
}

HiddenStateCache::Stats HiddenStateCache::stats() const {
  std::shared_lock lock(mutex_);
  return stats_;
}

CachedBackend::CachedBackend(const Backend& inner, std::shared_ptr<HiddenStateCache> cache)
    : inner_(inner), cache_(std::move(cache)) {}

CachedBackend::CachedBackend(const Backend& inner, const std::filesystem::path& cache_path)
    : CachedBackend(inner, std::make_shared<HiddenStateCache>(cache_path)) {}

HVector CachedBackend::hidden(std::string_view text) const {
  const auto& m = inner_.meta();
  const std::uint64_t th = text_hash(text);
  const std::uint64_t key = HiddenStateCache::make_key(m.backend_id, th);
  if (auto values = cache_->lookup(key)) {
    if (values->size() != m.hidden_dim) {
      throw BackendError("cache " + cache_->path().string() + " holds a " +
                         std::to_string(values->size()) + "-d vector but backend " +
                         m.backend_id + " is " + std::to_string(m.hidden_dim) + "-d");
    }
    ++hits_;
    HVector h;
    h.values = std::move(*values);
    h.source_text_hash = th;
    return h;
  }
  ++misses_;
  HVector h = inner_.hidden(text);
  check_hidden(h, m);
  cache_->insert(key, h.values);
  return h;
}

}  // namespace factprobe
