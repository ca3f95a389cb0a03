// Copyright 2026 The Erda Simulator Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>

#include "erda/erda.hpp"

namespace erda {

namespace {

WriteStatus write_status(Reply r) {
    switch (r) {
        case Reply::ok: return WriteStatus::ok;
        case Reply::not_found: return WriteStatus::not_found;
        case Reply::full: return WriteStatus::full;
        default: return WriteStatus::protocol_error;
    }
}

}  // namespace

ErdaClient::ErdaClient(Fabric& fab, EndpointId self, EndpointId server, ErdaClientOptions opts)
    : fab_(fab), self_(self), server_(server), opts_(opts) {
    token_ = fab_.liveness(self_);
    fab_.set_message_handler(self_, [this](Message m) { on_message(std::move(m)); });
}

ErdaClient::~ErdaClient() {
    if (fab_.liveness(self_) == token_) fab_.set_message_handler(self_, nullptr);
}

void ErdaClient::on_message(Message m) {
    if (m.payload.empty()) return;
    const std::uint8_t type = m.payload[0];
    if (!msg::is_notification(type)) {
        replies_.deliver(std::move(m));
        return;
    }
    try {
        Reader in(ByteView(m.payload).subspan(1));
        if (type != msg::kHeadArray) in.le<std::uint8_t>();  // head id
        heads_ = decode_head_array(in);
    } catch (const std::out_of_range&) {
    }
}

Task<Message> ErdaClient::rpc(Bytes payload, bool mailbox) {
    auto reply = replies_.expect();
    const bool posted = mailbox ? !fab_.write_imm(self_, server_, std::move(payload), client_id_).is_ready()
                                : fab_.send(self_, server_, std::move(payload)) == Status::ok;
    if (!posted) {
        replies_.deliver(Message{});
        lost_ = true;
    }
    co_return co_await reply;
}

Task<bool> ErdaClient::connect() {
    Message m = co_await rpc(Bytes{msg::kConnect});
    if (m.payload.empty() || m.payload[0] != msg::kConnectResp) co_return false;
    try {
        Reader in(ByteView(m.payload).subspan(1));
        client_id_ = in.le<std::uint32_t>();
        table_.base = in.le<std::uint64_t>();
        table_.slots = in.le<std::uint32_t>();
        table_rkey_ = in.le<std::uint32_t>();
        max_object_ = in.le<std::uint32_t>();
        region_size_ = in.le<std::uint64_t>();
        segment_size_ = in.le<std::uint64_t>();
        heads_ = decode_head_array(in);
    } catch (const std::out_of_range&) {
        co_return false;
    }
    lost_ = false;
    co_return true;
}

Task<bool> ErdaClient::refresh_heads() {
    Message m = co_await rpc(Bytes{msg::kHeadArrayReq});
    if (m.payload.empty() || m.payload[0] != msg::kHeadArrayResp) co_return false;
    try {
        Reader in(ByteView(m.payload).subspan(1));
        heads_ = decode_head_array(in);
    } catch (const std::out_of_range&) {
        co_return false;
    }
    co_return true;
}

std::optional<ErdaClient::Located> ErdaClient::locate(std::uint32_t h, std::uint32_t off) const {
    if (h >= heads_.size() || region_size_ == 0) return std::nullopt;
    const auto& chain = heads_[h].chains[chain_of(off)];
    const std::uint64_t pos = chain_pos(off);
    const std::uint64_t idx = pos / region_size_;
    if (idx >= chain.size()) return std::nullopt;
    return Located{chain[idx].base + pos % region_size_, chain[idx].rkey,
                   static_cast<std::size_t>(segment_size_ - pos % segment_size_)};
}

Task<std::optional<ErdaClient::Located>> ErdaClient::locate_or_refresh(std::uint32_t h, std::uint32_t off) {
    if (auto loc = locate(h, off)) co_return loc;
    if (!co_await refresh_heads()) co_return std::nullopt;
    co_return locate(h, off);
}

Task<std::optional<ObjectRecord>> ErdaClient::fetch(std::uint32_t h, std::uint32_t off, std::size_t window,
                                                    ByteView key) {
    auto loc = co_await locate_or_refresh(h, off);
    if (!loc) co_return std::nullopt;
    const std::size_t len = std::min(window, loc->room);
    auto r = co_await fab_.read(self_, server_, loc->rkey, loc->addr, len);
    counters_.last_get_reads++;
    if (r.status == Status::disconnected) lost_ = true;
    if (r.status != Status::ok) co_return std::nullopt;
    Bytes data = std::move(r.data);
    if (auto need = header_length(data); need && *need > data.size() && *need <= loc->room) {
        // Stale size hint: fetch the whole record.
        auto again = co_await fab_.read(self_, server_, loc->rkey, loc->addr, *need);
        counters_.last_get_reads++;
        if (again.status != Status::ok) co_return std::nullopt;
        data = std::move(again.data);
    }
    std::optional<ObjectRecord> rec = opts_.unsafe_skip_crc ? decode_unchecked(data) : verify_object(data);
    if (!rec || !std::equal(rec->key.begin(), rec->key.end(), key.begin(), key.end())) co_return std::nullopt;
    co_return rec;
}

Task<GetResult> ErdaClient::get(Bytes key) {
    counters_.gets++;
    counters_.last_get_reads = 0;
    if (lost_) co_return GetResult{GetStatus::disconnected, {}};
    if (key.empty() || key.size() > kMaxInlineKey || heads_.empty()) co_return GetResult{GetStatus::not_found, {}};
    const std::uint32_t h = head_of(key, static_cast<std::uint32_t>(heads_.size()));
    if (head_cleaning(h)) co_return co_await get_two_sided(std::move(key));

    const std::uint64_t home = table_.home_slot(key);
    const std::uint64_t addr = table_.slot_addr(home);
    const std::size_t len = std::min<std::uint64_t>(kNeighborhood, table_.physical_slots() - home) * kEntrySize;
    auto nb = co_await fab_.read(self_, server_, table_rkey_, addr, len);
    counters_.last_get_reads++;
    if (nb.status != Status::ok) {
        lost_ = nb.status == Status::disconnected;
        co_return GetResult{GetStatus::disconnected, {}};
    }
    auto e = find_in_neighborhood(nb.data, addr, key);
    if (!e) co_return GetResult{GetStatus::not_found, {}};
    if (head_cleaning(h)) co_return co_await get_two_sided(std::move(key));

    const auto w = unpack_atomic(e->word);
    const std::size_t window = e->size_hint ? e->size_hint * kSizeHintUnit : max_object_;
    auto rec = co_await fetch(h, w.new_offset(), window, key);
    const SimTime backoff = opts_.retry_backoff_ns ? opts_.retry_backoff_ns : fab_.cost().rtt_ns;
    for (std::uint32_t i = 0; !rec && !lost_ && i < opts_.read_retries; ++i) {
        // The writer may still be on the wire; give it a moment.
        counters_.retries++;
        co_await fab_.sleep(self_, backoff);
        if (head_cleaning(h)) co_return co_await get_two_sided(std::move(key));
        rec = co_await fetch(h, w.new_offset(), window, key);
    }
    if (lost_) co_return GetResult{GetStatus::disconnected, {}};
    if (rec) {
        if (rec->is_delete) co_return GetResult{GetStatus::not_found, {}};
        co_return GetResult{GetStatus::ok, std::move(rec->value)};
    }
    // A create whose object never arrived has no previous version.
    if (w.old_offset() == w.new_offset()) co_return GetResult{GetStatus::not_found, {}};

    counters_.fallbacks++;
    auto old = co_await fetch(h, w.old_offset(), max_object_, key);
    if (!old) co_return GetResult{lost_ ? GetStatus::disconnected : GetStatus::data_loss, {}};
    Bytes repair{msg::kRepair, static_cast<std::uint8_t>(key.size())};
    append(repair, key);
    append_le<std::uint64_t>(repair, e->word);
    if (fab_.send(self_, server_, std::move(repair)) == Status::ok) counters_.repairs_sent++;
    if (old->is_delete) co_return GetResult{GetStatus::not_found, {}};
    co_return GetResult{GetStatus::recovered, std::move(old->value)};
}

Task<GetResult> ErdaClient::get_two_sided(Bytes key) {
    counters_.two_sided_ops++;
    Bytes req{msg::kRead, static_cast<std::uint8_t>(key.size())};
    append(req, key);
    Message m = co_await rpc(std::move(req));
    if (m.payload.empty()) co_return GetResult{GetStatus::disconnected, {}};
    try {
        Reader in(m.payload);
        if (in.le<std::uint8_t>() != msg::kReadResp) co_return GetResult{GetStatus::disconnected, {}};
        const auto status = static_cast<Reply>(in.le<std::uint8_t>());
        const auto vlen = in.le<std::uint32_t>();
        if (status != Reply::ok) co_return GetResult{GetStatus::not_found, {}};
        co_return GetResult{GetStatus::ok, in.take(vlen)};
    } catch (const std::out_of_range&) {
        co_return GetResult{GetStatus::disconnected, {}};
    }
}

Task<WriteStatus> ErdaClient::put(Bytes key, Bytes value) {
    counters_.puts++;
    return write(std::move(key), std::move(value));
}

Task<WriteStatus> ErdaClient::remove(Bytes key) {
    counters_.deletes++;
    return write(std::move(key), std::nullopt);
}

Task<WriteStatus> ErdaClient::write(Bytes key, std::optional<Bytes> value) {
    if (lost_) co_return WriteStatus::disconnected;
    if (key.empty() || key.size() > kMaxInlineKey || heads_.empty()) co_return WriteStatus::protocol_error;
    const std::uint8_t op = value ? msg::kPut : msg::kDelete;
    Bytes object = value ? encode_object(key, ByteView(*value)) : encode_delete(key);
    if (object.size() > max_object_) co_return WriteStatus::protocol_error;
    const std::uint32_t h = head_of(key, static_cast<std::uint32_t>(heads_.size()));
    if (head_cleaning(h)) co_return co_await write_two_sided(std::move(key), std::move(object), op);

    Bytes req{op, static_cast<std::uint8_t>(key.size())};
    append(req, key);
    append_le<std::uint32_t>(req, static_cast<std::uint32_t>(object.size()));
    Message m = co_await rpc(std::move(req), true);
    if (m.payload.empty()) co_return WriteStatus::disconnected;
    if (m.payload.size() < 7 || m.payload[0] != msg::kWriteResp) co_return WriteStatus::protocol_error;
    const auto status = static_cast<Reply>(m.payload[1]);
    const std::uint32_t off = load_le<std::uint32_t>(m.payload.data() + 3);
    if (status == Reply::redirect) {
        heads_[h].phase = HeadPhase::merging;
        co_return co_await write_two_sided(std::move(key), std::move(object), op);
    }
    if (status != Reply::ok) co_return write_status(status);

    auto loc = co_await locate_or_refresh(h, off);
    if (!loc) co_return lost_ ? WriteStatus::disconnected : WriteStatus::protocol_error;
    const std::size_t paper = kPaperObjectOverhead + object.size() - kObjectHeaderSize;
    auto ack = co_await fab_.write(self_, server_, loc->rkey, loc->addr, std::move(object), paper);
    if (ack.status == Status::disconnected) lost_ = true;
    co_return ack.status == Status::ok ? WriteStatus::ok : WriteStatus::disconnected;
}

Task<WriteStatus> ErdaClient::write_two_sided(Bytes key, Bytes object, std::uint8_t op) {
    counters_.two_sided_ops++;
    Bytes req{op, static_cast<std::uint8_t>(key.size())};
    append(req, key);
    append_le<std::uint32_t>(req, static_cast<std::uint32_t>(object.size()));
    append(req, object);
    Message m = co_await rpc(std::move(req));
    if (m.payload.empty()) co_return WriteStatus::disconnected;
    if (m.payload.size() < 7 || m.payload[0] != msg::kWriteResp) co_return WriteStatus::protocol_error;
    co_return write_status(static_cast<Reply>(m.payload[1]));
}

}  // namespace erda
