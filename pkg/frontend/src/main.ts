import { SessionApi } from "./api.js";
import { bindConsole, wireInput } from "./ui.js";
import { ConsoleViewModel } from "./viewmodel.js";

// Entry point: ?session=<id> joins an existing session, otherwise a new one
// is created from ?party=<bundled name> (default: the wolf-hunt fixture).

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "";
  const api = new SessionApi(base);

  let sessionId = params.get("session");
  if (!sessionId) {
    const party = params.get("party") ?? "appendix_f";
    const created = await api.createSession({ party_ref: party });
    sessionId = created.session_id;
    params.set("session", sessionId);
    history.replaceState(null, "", `?${params.toString()}`);
  }

  const elements = {
    roster: document.getElementById("roster")!,
    banner: document.getElementById("banner")!,
    feed: document.getElementById("feed")!,
    input: document.getElementById("command-input") as HTMLInputElement,
    status: document.getElementById("status")!,
  };
  const vm = new ConsoleViewModel(api, sessionId, {
    onChange: () => render(),
  });
  const render = bindConsole(vm, elements);
  wireInput(vm, elements, {
    send: document.getElementById("send") as HTMLButtonElement,
    suggest: document.getElementById("suggest") as HTMLButtonElement,
  });
  await vm.connect();
  render();
}

void boot().catch((err) => {
  const status = document.getElementById("status");
  if (status) {
    status.textContent = `failed to start: ${err instanceof Error ? err.message : err}`;
    status.classList.add("status-error");
  }
});
