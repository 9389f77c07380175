#include "daggerlab/websocket.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

namespace daggerlab {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

struct Mailbox {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<json> inbox;
    bool open = false;
    std::uint64_t generation = 0;

    std::optional<json> pop(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mutex);
        cv.wait_for(lock, timeout, [&] { return !inbox.empty() || !open; });
        if (!inbox.empty()) {
            json m = std::move(inbox.front());
            inbox.pop_front();
            return m;
        }
        if (!open) throw ChannelClosed("console disconnected");
        return std::nullopt;
    }
};

// All socket work happens on the io thread; other threads only post to it.
class Session : public std::enable_shared_from_this<Session> {
public:
    Session(tcp::socket socket, Mailbox& box) : ws_(std::move(socket)), box_(box) {}

    websocket::stream<beast::tcp_stream>& stream() { return ws_; }

    void start(std::uint64_t generation) {
        generation_ = generation;
        ws_.text(true);
        read();
    }

    void send(std::string text) {
        net::post(ws_.get_executor(), [self = shared_from_this(), text = std::move(text)]() mutable {
            if (self->dead_) return;
            self->queue_.push_back(std::move(text));
            if (self->queue_.size() == 1) self->write();
        });
    }

    void close() {
        net::post(ws_.get_executor(), [self = shared_from_this()] {
            if (self->dead_ || self->closing_) return;
            self->closing_ = true;
            self->ws_.async_close(websocket::close_code::normal, [self](beast::error_code) { self->gone(); });
        });
    }

private:
    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec) {
            gone();
            return;
        }
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        json m = json::parse(text, nullptr, false);
        if (m.is_discarded() || !m.is_object()) {
            send(json{{"type", "error"}, {"message", "malformed message"}}.dump());
        } else {
            std::lock_guard lock(box_.mutex);
            if (box_.generation == generation_) {
                box_.inbox.push_back(std::move(m));
                box_.cv.notify_all();
            }
        }
        read();
    }

    void write() {
        ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                self->gone();
                return;
            }
            self->queue_.pop_front();
            if (!self->queue_.empty()) self->write();
        });
    }

    void gone() {
        if (dead_) return;
        dead_ = true;
        queue_.clear();
        beast::error_code ignored;
        beast::get_lowest_layer(ws_).socket().close(ignored);
        std::lock_guard lock(box_.mutex);
        if (box_.generation == generation_) box_.open = false;
        box_.cv.notify_all();
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    std::deque<std::string> queue_;
    Mailbox& box_;
    std::uint64_t generation_ = 0;
    bool dead_ = false;
    bool closing_ = false;
};

}  // namespace

// -- server ------------------------------------------------------------------------

struct WebSocketServer::Impl {
    Mailbox box;
    net::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::shared_ptr<Session> current;  // guarded by box.mutex
    std::uint64_t connections = 0;     // io thread only
    std::thread thread;

    Impl(std::uint16_t port, const std::string& address) {
        const tcp::endpoint ep(net::ip::make_address(address), port);
        acceptor.open(ep.protocol());
        acceptor.set_option(net::socket_base::reuse_address(true));
        acceptor.bind(ep);
        acceptor.listen();
        do_accept();
        thread = std::thread([this] { ioc.run(); });
    }

    ~Impl() {
        net::post(ioc, [this] {
            beast::error_code ignored;
            acceptor.close(ignored);
        });
        {
            std::lock_guard lock(box.mutex);
            if (current) current->close();
        }
        // Give the close handshake a moment before tearing the loop down.
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        ioc.stop();
        thread.join();
    }

    void do_accept() {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
            if (ec == net::error::operation_aborted) return;
            if (!ec) {
                auto s = std::make_shared<Session>(std::move(socket), box);
                s->stream().async_accept([this, s](beast::error_code hec) {
                    if (!hec) attach(s);
                });
            }
            do_accept();
        });
    }

    void attach(const std::shared_ptr<Session>& s) {
        std::uint64_t generation = 0;
        {
            std::lock_guard lock(box.mutex);
            if (box.open) {
                // One console per session.
                s->close();
                return;
            }
            generation = ++box.generation;
            current = s;
            box.open = true;
            box.inbox.clear();
        }
        box.cv.notify_all();
        s->start(generation);
    }
};

WebSocketServer::WebSocketServer(std::uint16_t port, const std::string& address)
    : impl_(std::make_unique<Impl>(port, address)) {}

WebSocketServer::~WebSocketServer() = default;

std::uint16_t WebSocketServer::port() const { return impl_->acceptor.local_endpoint().port(); }

bool WebSocketServer::accept(std::chrono::milliseconds timeout) {
    std::unique_lock lock(impl_->box.mutex);
    return impl_->box.cv.wait_for(lock, timeout, [&] { return impl_->box.open; });
}

bool WebSocketServer::await_reconnect(std::chrono::milliseconds timeout) { return accept(timeout); }

void WebSocketServer::send(const json& message) {
    std::shared_ptr<Session> s;
    {
        std::lock_guard lock(impl_->box.mutex);
        if (!impl_->box.open) throw ChannelClosed("console disconnected");
        s = impl_->current;
    }
    s->send(message.dump());
}

std::optional<json> WebSocketServer::receive(std::chrono::milliseconds timeout) { return impl_->box.pop(timeout); }

void WebSocketServer::close() {
    std::lock_guard lock(impl_->box.mutex);
    if (impl_->current) impl_->current->close();
}

// -- client ------------------------------------------------------------------------

struct WebSocketClient::Impl {
    Mailbox box;
    net::io_context ioc;
    std::shared_ptr<Session> session;
    std::thread thread;

    Impl(const std::string& host, std::uint16_t port) {
        tcp::resolver resolver(ioc);
        tcp::socket socket(ioc);
        net::connect(socket, resolver.resolve(host, std::to_string(port)));
        session = std::make_shared<Session>(std::move(socket), box);
        session->stream().handshake(host, "/");
        box.open = true;
        box.generation = 1;
        session->start(1);
        thread = std::thread([this] { ioc.run(); });
    }

    ~Impl() {
        session->close();
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        ioc.stop();
        thread.join();
    }
};

WebSocketClient::WebSocketClient(const std::string& host, std::uint16_t port)
    : impl_(std::make_unique<Impl>(host, port)) {}

WebSocketClient::~WebSocketClient() = default;

void WebSocketClient::send(const json& message) {
    {
        std::lock_guard lock(impl_->box.mutex);
        if (!impl_->box.open) throw ChannelClosed("server disconnected");
    }
    impl_->session->send(message.dump());
}

std::optional<json> WebSocketClient::receive(std::chrono::milliseconds timeout) { return impl_->box.pop(timeout); }

void WebSocketClient::close() { impl_->session->close(); }

}  // namespace daggerlab
