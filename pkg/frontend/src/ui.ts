import type { ConsoleViewModel } from "./viewmodel.js";

// Thin DOM layer: the view model owns all state; this just mirrors it.
// Roster rows render verbatim (textContent of the served line); the only
// styling hook is a class for rows the service marked Dead.

export interface ConsoleElements {
  roster: HTMLElement;
  banner: HTMLElement;
  feed: HTMLElement;
  input: HTMLInputElement;
  status: HTMLElement;
}

export function bindConsole(vm: ConsoleViewModel, el: ConsoleElements): () => void {
  const render = () => {
    el.banner.textContent = vm.turnBanner ?? "";
    el.status.textContent = vm.connectionBanner ?? (vm.connected ? "live" : "connecting…");
    el.status.classList.toggle("status-error", vm.connectionBanner !== null);

    el.roster.replaceChildren(
      ...vm.actorRows.map((row) => {
        const li = document.createElement("li");
        li.textContent = row;
        if (row.includes("; Dead>")) li.classList.add("dead");
        return li;
      }),
    );

    el.feed.replaceChildren(
      ...vm.feed.map((entry) => {
        const li = document.createElement("li");
        li.textContent = entry.text;
        li.classList.add(`feed-${entry.kind}`);
        return li;
      }),
    );
    el.feed.scrollTop = el.feed.scrollHeight;

    if (document.activeElement !== el.input) {
      el.input.value = vm.pendingCommand;
    }
  };
  render();
  return render;
}

export function wireInput(
  vm: ConsoleViewModel,
  el: ConsoleElements,
  buttons: { send: HTMLButtonElement; suggest: HTMLButtonElement },
): void {
  let historyCursor = -1;

  const submit = async () => {
    const text = el.input.value;
    el.input.value = "";
    historyCursor = -1;
    if (text.trim().startsWith("!")) {
      await vm.submitCommand(text);
    } else if (text.trim()) {
      await vm.api.postMessage(vm.sessionId, vm.author, text.trim());
    }
  };

  const suggest = async () => {
    const text = el.input.value;
    el.input.value = "";
    const command = await vm.suggest(text);
    if (command !== null) {
      el.input.value = command; // player edits/confirms; nothing auto-runs
      el.input.focus();
    }
  };

  buttons.send.addEventListener("click", () => void submit());
  buttons.suggest.addEventListener("click", () => void suggest());
  el.input.addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
      void submit();
    } else if (event.key === "ArrowUp") {
      if (vm.commandHistory.length === 0) return;
      historyCursor = historyCursor === -1
        ? vm.commandHistory.length - 1
        : Math.max(0, historyCursor - 1);
      el.input.value = vm.commandHistory[historyCursor] ?? "";
      event.preventDefault();
    } else if (event.key === "ArrowDown") {
      if (historyCursor === -1) return;
      historyCursor = Math.min(vm.commandHistory.length - 1, historyCursor + 1);
      el.input.value = vm.commandHistory[historyCursor] ?? "";
      event.preventDefault();
    }
  });
}
