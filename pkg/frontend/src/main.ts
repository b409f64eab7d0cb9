/**
 * Browser entry point. The service base URL defaults to same-origin and can
 * be overridden with ?api=http://host:port when the static files are served
 * separately from the API.
 */

import { ApiClient } from "./api.js";
import { createApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "";
const root = document.getElementById("root");
if (!root) {
  throw new Error("missing #root mount point");
}
createApp(root, new ApiClient(baseUrl), window);
