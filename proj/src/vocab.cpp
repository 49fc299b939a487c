#include "scdpo/vocab.hpp"

#include <algorithm>
#include <stdexcept>

namespace scdpo {

Vocab Vocab::task_vocab() {
    std::vector<std::string> symbols = {
        kEosSymbol, kUnkSymbol,
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
        " ", "\n", ".", ":", "+", "-", "*", "=",
        "Start", "with", "Add", "Subtract", "Multiply", "by",
        "Step", "The", "answer", "is",
    };
    return Vocab(std::move(symbols));
}

Vocab::Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    if (symbols_.size() > 128) throw std::invalid_argument("vocab: more than 128 symbols");
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        const std::string& s = symbols_[i];
        if (s.empty()) throw std::invalid_argument("vocab: empty symbol");
        if (!index_.emplace(s, static_cast<TokenId>(i)).second) {
            throw std::invalid_argument("vocab: duplicate symbol '" + s + "'");
        }
        if (s == kEosSymbol) eos_id_ = static_cast<TokenId>(i);
        if (s == kUnkSymbol) unk_id_ = static_cast<TokenId>(i);
        if (s == "\n") newline_id_ = static_cast<TokenId>(i);
    }
    if (eos_id_ < 0 || unk_id_ < 0) {
        throw std::invalid_argument("vocab: must contain exactly one <eos> and one <unk>");
    }
    by_length_.resize(symbols_.size());
    for (std::size_t i = 0; i < symbols_.size(); ++i) by_length_[i] = static_cast<TokenId>(i);
    std::stable_sort(by_length_.begin(), by_length_.end(), [&](TokenId a, TokenId b) {
        return symbols_[static_cast<std::size_t>(a)].size() > symbols_[static_cast<std::size_t>(b)].size();
    });
}

TokenId Vocab::find(const std::string& symbol) const {
    auto it = index_.find(symbol);
    return it == index_.end() ? -1 : it->second;
}

TokenSeq Vocab::encode(const std::string& text) const {
    TokenSeq out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        TokenId matched = -1;
        for (TokenId id : by_length_) {
            if (id == eos_id_ || id == unk_id_) continue;
            const std::string& s = symbols_[static_cast<std::size_t>(id)];
            if (text.compare(pos, s.size(), s) == 0) {
                matched = id;
                pos += s.size();
                break;
            }
        }
        if (matched < 0) {
            matched = unk_id_;
            ++pos;
        }
        out.push_back(matched);
    }
    return out;
}

std::string Vocab::decode(const TokenSeq& ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id < 0 || id >= size()) throw std::out_of_range("decode: token id out of range");
        if (id == eos_id_) continue;
        if (id == unk_id_) {
            out.push_back('?');
            continue;
        }
        out += symbols_[static_cast<std::size_t>(id)];
    }
    return out;
}

bool Vocab::round_trips(const std::string& text) const { return decode(encode(text)) == text; }

}  // namespace scdpo
