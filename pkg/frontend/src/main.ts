import { initApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8765";
const session = params.get("session") ?? "default";

initApp(document.getElementById("app") as HTMLElement, { baseUrl, session });
