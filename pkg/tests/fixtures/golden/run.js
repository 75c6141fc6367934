function run(task) {
  var tries = 0;
  do {
    tries++;
  } while (tries < 3 && !task.done);
  switch (task.kind) {
    case 'a':
      return 1;
    case 'b':
      break;
    default:
      tries = 0;
  }
  try {
    task.exec();
  } catch (err) {
    throw err;
  }
}
