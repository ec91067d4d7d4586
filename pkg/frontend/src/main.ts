import { ApiClient } from "./api.js";
import { ExplorerApp } from "./app.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
// Served under /ui by the scoring service itself, or standalone against a
// host given via ?api=http://host:port.
const override = new URLSearchParams(window.location.search).get("api");
const base = override ?? window.location.origin;
void new ExplorerApp(new ApiClient(base), root).start();
